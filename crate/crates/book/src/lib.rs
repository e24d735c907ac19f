//! The chapters of the guide in `book/src`, compiled as doc comments so
//! their code blocks run with `cargo test`.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/meshes-and-forms.md")]
pub mod meshes_and_forms {}

#[doc = include_str!("../../../book/src/tangent-plane.md")]
pub mod tangent_plane {}

#[doc = include_str!("../../../book/src/newmark.md")]
pub mod newmark {}

#[doc = include_str!("../../../book/src/time-loop.md")]
pub mod time_loop {}

#[doc = include_str!("../../../book/src/experiments.md")]
pub mod experiments {}

#[doc = include_str!("../../../book/src/verification.md")]
pub mod verification {}
