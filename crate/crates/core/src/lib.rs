pub mod ckl;
pub mod confidence;
pub mod corpus;
pub mod error;
pub mod filter;
pub mod generator;
pub mod http;
pub mod jsonl;
pub mod metrics;
pub mod pipeline;
pub mod reporting;
pub mod retrieval;
pub mod unification;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/retrieval.md")]
    mod retrieval {}
    #[doc = include_str!("../../../book/src/confidence.md")]
    mod confidence {}
    #[doc = include_str!("../../../book/src/evidence.md")]
    mod evidence {}
    #[doc = include_str!("../../../book/src/prompts.md")]
    mod prompts {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/ckl.md")]
    mod ckl {}
    #[doc = include_str!("../../../book/src/pipeline.md")]
    mod pipeline {}
    #[doc = include_str!("../../../book/src/reports.md")]
    mod reports {}
}
