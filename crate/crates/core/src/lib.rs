//! Benchmark harness and analysis toolkit for measuring how recording
//! channel, recording environment and subject condition affect the transfer
//! of single-channel sleep stage scorers, and for ranking source datasets by
//! their usefulness to each target.

pub mod ledger;
pub mod manifest;
pub mod metrics;
pub mod plan;
pub mod report;
pub mod scorer;
pub mod seeding;
pub mod signals;
pub mod stages;
pub mod study;
pub mod synthgen;
pub mod transferscore;

#[cfg(doctest)]
mod guide {
    #[doc = include_str!("../../../book/src/introduction.md")]
    struct Introduction;
    #[doc = include_str!("../../../book/src/plan.md")]
    struct Plan;
    #[doc = include_str!("../../../book/src/metrics.md")]
    struct Metrics;
    #[doc = include_str!("../../../book/src/signals.md")]
    struct Signals;
    #[doc = include_str!("../../../book/src/study.md")]
    struct Study;
    #[doc = include_str!("../../../book/src/impact.md")]
    struct Impact;
    #[doc = include_str!("../../../book/src/transferability.md")]
    struct Transferability;
    #[doc = include_str!("../../../book/src/external.md")]
    struct External;
}
