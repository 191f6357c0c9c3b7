//! Tagged reward signals. The two levels of the hierarchy consume different
//! rewards; separate types keep them from being mixed up.

/// Reward emitted by the environment. Drives the high-level agent.
#[derive(Clone, Copy, Debug, Default, PartialEq, PartialOrd)]
pub struct EnvReward(pub f64);

/// Goal-attainment reward. Drives the low-level agent.
#[derive(Clone, Copy, Debug, Default, PartialEq, PartialOrd)]
pub struct IntrinsicReward(pub f64);

/// A scalar reward usable as a TD target.
pub trait RewardSignal: Copy + core::fmt::Debug {
    fn value(self) -> f64;
}

impl RewardSignal for EnvReward {
    fn value(self) -> f64 {
        self.0
    }
}

impl RewardSignal for IntrinsicReward {
    fn value(self) -> f64 {
        self.0
    }
}
