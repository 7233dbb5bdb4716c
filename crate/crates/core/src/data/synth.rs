//! Sinusoidal stick-figure walkers on the 18-joint layout.
//!
//! Identity lives in body proportions and gait dynamics ([`WalkerParams`]);
//! each recording adds its own start phase, tempo, camera scale and placement
//! ([`TakeParams`]) plus Gaussian keypoint noise drawn from a seed.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::sequence::{Condition, SequenceMeta, SkeletonSequence};
use crate::error::{Error, Result};

const JOINTS: usize = 18;

/// Per-identity body and gait parameters. Lengths are in body units
/// (roughly meters), angles in radians, cadence in gait cycles per frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WalkerParams {
    pub torso: f64,
    pub head: f64,
    pub shoulder_width: f64,
    pub hip_width: f64,
    pub upper_arm: f64,
    pub forearm: f64,
    pub thigh: f64,
    pub shin: f64,
    pub cadence: f64,
    pub hip_swing: f64,
    pub knee_flex: f64,
    pub knee_phase: f64,
    pub arm_swing: f64,
    pub arm_phase: f64,
    pub elbow_flex: f64,
    pub elbow_phase: f64,
    pub lean: f64,
    pub bob: f64,
}

impl Default for WalkerParams {
    fn default() -> Self {
        Self {
            torso: 0.52,
            head: 0.22,
            shoulder_width: 0.38,
            hip_width: 0.2,
            upper_arm: 0.3,
            forearm: 0.27,
            thigh: 0.45,
            shin: 0.43,
            cadence: 1.0 / 28.0,
            hip_swing: 0.4,
            knee_flex: 0.6,
            knee_phase: 0.15,
            arm_swing: 0.31,
            arm_phase: 0.0,
            elbow_flex: 0.33,
            elbow_phase: 0.0,
            lean: 0.05,
            bob: 0.015,
        }
    }
}

impl WalkerParams {
    /// Draws a random identity around the default walker.
    ///
    /// `spread` scales every parameter's range: 0 gives the default walker,
    /// 1 gives lengths within ±12-15% and cadences of 22-34 frames per cycle.
    pub fn sample<R: Rng + ?Sized>(rng: &mut R, spread: f64) -> Self {
        let d = Self::default();
        let mut around = |center: f64, half: f64| center + spread * half * rng.gen_range(-1.0..1.0);
        Self {
            torso: d.torso * around(1.0, 0.12),
            head: d.head * around(1.0, 0.12),
            shoulder_width: d.shoulder_width * around(1.0, 0.15),
            hip_width: d.hip_width * around(1.0, 0.15),
            upper_arm: d.upper_arm * around(1.0, 0.12),
            forearm: d.forearm * around(1.0, 0.12),
            thigh: d.thigh * around(1.0, 0.12),
            shin: d.shin * around(1.0, 0.12),
            cadence: 1.0 / around(28.0, 6.0),
            hip_swing: around(d.hip_swing, 0.11),
            knee_flex: around(d.knee_flex, 0.27),
            knee_phase: around(d.knee_phase, 0.75),
            arm_swing: around(d.arm_swing, 0.19),
            arm_phase: around(d.arm_phase, 0.6),
            elbow_flex: around(d.elbow_flex, 0.27),
            elbow_phase: around(d.elbow_phase, 1.0),
            lean: around(d.lean, 0.1),
            bob: around(d.bob, 0.012),
        }
    }

    fn validate(&self) -> Result<()> {
        let lengths = [
            ("torso", self.torso),
            ("head", self.head),
            ("shoulder_width", self.shoulder_width),
            ("hip_width", self.hip_width),
            ("upper_arm", self.upper_arm),
            ("forearm", self.forearm),
            ("thigh", self.thigh),
            ("shin", self.shin),
        ];
        for (name, v) in lengths {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::invalid(format!(
                    "walker limb length `{name}` must be positive, got {v}"
                )));
            }
        }
        if !self.cadence.is_finite() || self.cadence < 0.0 {
            return Err(Error::invalid("walker cadence must be non-negative"));
        }
        Ok(())
    }
}

/// Per-recording nuisance: where the cycle starts, how fast, and how the
/// camera sees the walker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TakeParams {
    /// Gait phase at frame 0, radians.
    pub phase: f64,
    /// Multiplies the identity's cadence.
    pub tempo: f64,
    /// Multiplies all swing amplitudes.
    pub vigor: f64,
    /// Pixels per body unit.
    pub scale: f64,
    /// Pixel position of the hip center at frame 0.
    pub origin: [f64; 2],
    /// Apparent drift from a panning camera, body units per frame.
    #[serde(default)]
    pub pan: [f64; 2],
}

impl Default for TakeParams {
    fn default() -> Self {
        Self {
            phase: 0.0,
            tempo: 1.0,
            vigor: 1.0,
            scale: 200.0,
            origin: [120.0, 400.0],
            pan: [0.0, 0.0],
        }
    }
}

impl TakeParams {
    /// `pan` bounds the horizontal camera drift; vertical drift is a fifth of it.
    pub fn sample<R: Rng + ?Sized>(rng: &mut R, pan: f64) -> Self {
        Self {
            phase: rng.gen_range(0.0..2.0 * PI),
            tempo: rng.gen_range(0.95..1.05),
            vigor: rng.gen_range(0.93..1.07),
            scale: rng.gen_range(150.0..250.0),
            origin: [rng.gen_range(60.0..200.0), rng.gen_range(360.0..440.0)],
            pan: [pan * rng.gen_range(-1.0..1.0), 0.2 * pan * rng.gen_range(-1.0..1.0)],
        }
    }
}

/// Noise, occlusion and condition effects shared by a whole dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthOptions {
    /// Keypoint noise standard deviation, body units.
    pub noise: f64,
    /// Probability that a joint is dropped (confidence 0) in a frame.
    pub occlusion: f64,
    /// Right-arm swing factor when carrying a bag.
    pub bag_arm_scale: f64,
    /// Per-frame whole-body jitter standard deviation with a coat, body units.
    pub coat_jitter: f64,
    /// Apparent limb length factor with a coat.
    pub coat_limb_scale: f64,
    /// Bound on the per-take camera pan, body units per frame.
    pub pan: f64,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self {
            noise: 0.01,
            occlusion: 0.0,
            bag_arm_scale: 0.3,
            coat_jitter: 0.01,
            coat_limb_scale: 0.92,
            pan: 0.02,
        }
    }
}

type Point = [f64; 2];

fn along(from: Point, length: f64, angle: f64) -> Point {
    // angle measured from straight down, positive towards the walking direction
    [from[0] + length * angle.sin(), from[1] - length * angle.cos()]
}

fn offset(p: Point, dx: f64, dy: f64) -> Point {
    [p[0] + dx, p[1] + dy]
}

/// Noise-free pose at gait phase `phi` in body coordinates (y up).
fn pose(w: &WalkerParams, take: &TakeParams, phi: f64, advance: f64) -> [Point; JOINTS] {
    let v = take.vigor;
    let hip_y = 0.97 * (w.thigh + w.shin) + w.bob * v * (2.0 * phi).cos();
    let root = [advance, hip_y];
    let neck = along(root, w.torso, PI - w.lean);
    let mut pts = [[0.0; 2]; JOINTS];
    pts[1] = neck;
    pts[0] = offset(neck, w.head * 0.45, w.head * 0.8);
    pts[14] = offset(pts[0], -w.head * 0.12, w.head * 0.18);
    pts[15] = offset(pts[0], -w.head * 0.08, w.head * 0.2);
    pts[16] = offset(neck, -w.head * 0.1, w.head * 0.85);
    pts[17] = offset(neck, -w.head * 0.05, w.head * 0.9);

    for (right, side_phase, shoulder, elbow, wrist, hip, knee, ankle) in [
        (true, phi, 2, 3, 4, 8, 9, 10),
        (false, phi + PI, 5, 6, 7, 11, 12, 13),
    ] {
        let sign = if right { 1.0 } else { -1.0 };
        let sh = offset(neck, sign * 0.3 * w.shoulder_width, -0.02);
        let swing = v * w.arm_swing * (side_phase + PI + w.arm_phase).sin();
        let bend = v * w.elbow_flex * 0.5 * (1.0 + (side_phase + w.elbow_phase).sin());
        pts[shoulder] = sh;
        pts[elbow] = along(sh, w.upper_arm, swing);
        pts[wrist] = along(pts[elbow], w.forearm, swing + bend);

        let hp = offset(root, sign * 0.3 * w.hip_width, 0.0);
        let thigh_angle = v * w.hip_swing * side_phase.sin();
        let flex = v * w.knee_flex * 0.5 * (1.0 + (side_phase + w.knee_phase).sin());
        pts[hip] = hp;
        pts[knee] = along(hp, w.thigh, thigh_angle);
        pts[ankle] = along(pts[knee], w.shin, thigh_angle - flex);
    }
    pts
}

/// Renders one walker recording.
///
/// Frames are in pixel coordinates with y pointing down. With zero swing
/// amplitudes and zero noise every frame is the same static pose.
pub fn synth_walker(
    walker: &WalkerParams,
    take: &TakeParams,
    meta: SequenceMeta,
    frames: usize,
    seed: u64,
    options: &SynthOptions,
) -> Result<SkeletonSequence> {
    if frames < 8 {
        return Err(Error::invalid(format!(
            "synthetic sequences need at least 8 frames, got {frames}"
        )));
    }
    walker.validate()?;
    let mut w = walker.clone();
    if meta.condition == Condition::Cl {
        for len in [&mut w.upper_arm, &mut w.forearm, &mut w.thigh, &mut w.shin] {
            *len *= options.coat_limb_scale;
        }
        w.shoulder_width /= options.coat_limb_scale;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, options.noise.max(0.0)).map_err(|e| Error::invalid(e.to_string()))?;
    let jitter = Normal::new(0.0, options.coat_jitter.max(0.0)).map_err(|e| Error::invalid(e.to_string()))?;
    let rate = w.cadence * take.tempo;
    // one gait cycle covers two steps of about 2·leg·sin(swing) each
    let speed = rate * 4.0 * (w.thigh + w.shin) * (take.vigor * w.hip_swing).sin() * 0.5;

    let mut data = Vec::with_capacity(frames * JOINTS);
    for t in 0..frames {
        let phi = 2.0 * PI * rate * t as f64 + take.phase;
        let mut pts = pose(&w, take, phi, speed * t as f64);
        for p in &mut pts {
            p[0] += take.pan[0] * t as f64;
            p[1] += take.pan[1] * t as f64;
        }
        if meta.condition == Condition::Bg {
            bag_arm(&mut pts, &w, take, phi, options.bag_arm_scale);
        }
        let shake = if meta.condition == Condition::Cl {
            [jitter.sample(&mut rng), jitter.sample(&mut rng)]
        } else {
            [0.0, 0.0]
        };
        for p in pts {
            let x = p[0] + shake[0] + noise.sample(&mut rng);
            let y = p[1] + shake[1] + noise.sample(&mut rng);
            let dropped = options.occlusion > 0.0 && rng.gen_bool(options.occlusion.min(1.0));
            data.push(if dropped {
                [0.0; 3]
            } else {
                [
                    take.origin[0] + take.scale * x,
                    take.origin[1] - take.scale * (y - 0.97 * (w.thigh + w.shin)),
                    1.0,
                ]
            });
        }
    }
    SkeletonSequence::new(meta, JOINTS, data)
}

/// Carrying a bag damps the right arm's swing and holds the elbow still.
fn bag_arm(pts: &mut [Point; JOINTS], w: &WalkerParams, take: &TakeParams, phi: f64, factor: f64) {
    let swing = factor * take.vigor * w.arm_swing * (phi + PI + w.arm_phase).sin();
    let bend = 0.5 * w.elbow_flex;
    pts[3] = along(pts[2], w.upper_arm, swing);
    pts[4] = along(pts[3], w.forearm, swing + bend);
}

/// Shape of a synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub identities: usize,
    pub nm_per_identity: u32,
    pub bg_per_identity: u32,
    pub cl_per_identity: u32,
    pub frames: usize,
    pub view: u32,
    pub seed: u64,
    /// Range scale of the per-identity parameters, see [`WalkerParams::sample`].
    pub identity_spread: f64,
    pub options: SynthOptions,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            identities: 16,
            nm_per_identity: 6,
            bg_per_identity: 1,
            cl_per_identity: 1,
            frames: 72,
            view: 90,
            seed: 0,
            identity_spread: 1.0,
            options: SynthOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TakeRecord {
    pub meta: SequenceMeta,
    pub take: TakeParams,
    pub frames: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityRecord {
    pub identity: u32,
    pub walker: WalkerParams,
    pub takes: Vec<TakeRecord>,
}

/// Everything needed to regenerate a synthetic dataset exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthManifest {
    pub version: u32,
    pub options: SynthOptions,
    pub identities: Vec<IdentityRecord>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

impl SynthManifest {
    /// Draws identity and take parameters for `cfg`. Identities are numbered
    /// from 1; sequences of each condition from 1.
    pub fn generate(cfg: &SynthConfig) -> Result<Self> {
        if cfg.identities == 0 {
            return Err(Error::invalid("synthetic dataset needs at least one identity"));
        }
        if cfg.nm_per_identity + cfg.bg_per_identity + cfg.cl_per_identity == 0 {
            return Err(Error::invalid("synthetic dataset needs at least one sequence per identity"));
        }
        if cfg.frames < 8 {
            return Err(Error::invalid(format!(
                "synthetic sequences need at least 8 frames, got {}",
                cfg.frames
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let identities = (1..=cfg.identities as u32)
            .map(|identity| {
                let walker = WalkerParams::sample(&mut rng, cfg.identity_spread);
                let mut takes = Vec::new();
                for (condition, count) in [
                    (Condition::Nm, cfg.nm_per_identity),
                    (Condition::Bg, cfg.bg_per_identity),
                    (Condition::Cl, cfg.cl_per_identity),
                ] {
                    for seq_index in 1..=count {
                        takes.push(TakeRecord {
                            meta: SequenceMeta {
                                identity,
                                condition,
                                seq_index,
                                view: cfg.view,
                            },
                            take: TakeParams::sample(&mut rng, cfg.options.pan),
                            frames: cfg.frames,
                            seed: rng.gen(),
                        });
                    }
                }
                IdentityRecord {
                    identity,
                    walker,
                    takes,
                }
            })
            .collect();
        Ok(Self {
            version: 1,
            options: cfg.options.clone(),
            identities,
        })
    }

    pub fn num_sequences(&self) -> usize {
        self.identities.iter().map(|r| r.takes.len()).sum()
    }

    /// Renders every take, in manifest order.
    pub fn sequences(&self) -> Result<Vec<SkeletonSequence>> {
        let mut out = Vec::with_capacity(self.num_sequences());
        for record in &self.identities {
            for take in &record.takes {
                out.push(synth_walker(
                    &record.walker,
                    &take.take,
                    take.meta,
                    take.frames,
                    take.seed,
                    &self.options,
                )?);
            }
        }
        Ok(out)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest is serializable")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse {
            what: "synthetic manifest".into(),
            reason: e.to_string(),
        })
    }
}
