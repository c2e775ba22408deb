//! The two-task one-dimensional control problem: REINFORCE teachers and
//! alternating-task OPD distillation into a shared student.

pub mod env;
pub mod student;
pub mod teacher;
pub mod visitation;

pub use env::{
    env_step, mean_final_distance, mirror_policy, policy_input, rollout, rollout_mirrored_noise, Episode, TaskSpec,
    TeacherReward, ToyEnvConfig,
};
pub use student::{
    continuous_step_reward, distill_student, distill_student_from, DistillConfig, DistillOutcome, UpdateRecord,
    VarianceBlock,
};
pub use teacher::{episode_rewards, train_teacher, train_teacher_unchecked, TeacherConfig, TeacherReport};
pub use visitation::VisitationGrid;
