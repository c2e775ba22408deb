//! Local reverse-KL objectives on token models: full-vocabulary, sampled
//! token, and truncated to a top-K support, with nucleus rollouts and
//! special-token masking.

pub mod diagnostics;
pub mod distill;
pub mod lsm;
pub mod objective;
pub mod sampling;
pub mod support_set;

pub use diagnostics::{negative_reward_fraction, position_gap_profile, reward_scatter, DriftingModel};
pub use distill::{distill_tokens, TokenDistillConfig, TokenDistillOutcome, TokenTask, TokenTaskSpec};
pub use lsm::{apply_mask, lsm_loss, sampled_token_objective, LossConfig, Normalizer, Objective};
pub use objective::{full_local_rkl, full_local_rkl_logit_grad, sampled_token_loss, TEACHER_FLOOR};
pub use sampling::{nucleus, sample_group, sample_rollout, top_p_sample, MaskSet, RolloutConfig};
pub use support_set::{
    build_support, renormalize, renormalize_floored, top_k_ids, truncated_rkl, SupportSet, SupportSource,
    TruncatedDistribution,
};
