//! Keypoint ingestion, sequence normalization, synthetic walkers and the
//! train/gallery/probe protocol.

mod normalize;
mod pose;
mod protocol;
mod sequence;
mod synth;

pub use normalize::normalize_sequence;
pub use pose::{frame_to_json, parse_pose_keypoints, PoseFrame};
pub use protocol::{build_protocol, DatasetProtocol, ProtocolSpec, Selector};
pub use sequence::{
    assemble_sequence, frame_file_name, frame_files, load_dataset, load_sequence_dir,
    write_sequence_dir, Condition, SequenceMeta, SkeletonSequence,
};
pub use synth::{
    synth_walker, IdentityRecord, SynthConfig, SynthManifest, SynthOptions, TakeParams,
    TakeRecord, WalkerParams, MANIFEST_FILE,
};
