//! Detection of fake and machine-generated professional profiles from the
//! text a member supplies at registration.
//!
//! The pipeline: [`profile`] parses labelled profiles, [`text`] cleans each
//! field into lemmas, [`embedding`] maps tokens to vectors, [`featurize`]
//! builds tag-debiased document embeddings, [`classify`] trains the five
//! classifiers, and [`experiment`] runs the evaluation protocols. [`synth`]
//! generates seeded corpora with controllable class signal.

pub mod classify;
pub mod embedding;
pub mod experiment;
pub mod featurize;
pub mod profile;
pub mod synth;
pub mod text;
