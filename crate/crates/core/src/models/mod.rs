//! The three networks and their training loops.

pub mod agcm;
pub mod hg;
pub mod layers;
pub mod le;
pub mod train;

pub use agcm::{mean_patch_psnr, train_agcm, Agcm, AgcmConfig, AgcmInit, ConditionVector};
pub use hg::{highlight_mask, hg_compose, mask_tensor, mask_value, masked_l1, train_hg, upstream_outputs, Hg, HgConfig};
pub use layers::{stage_image, stage_output};
pub use le::{train_le, Le, LeConfig};
pub use train::{optimize, LogRow, TrainConfig, TrainLog};
