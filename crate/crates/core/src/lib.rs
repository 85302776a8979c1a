pub mod app;
pub mod autodiff;
pub mod error;
pub mod geom;
pub mod gfn;
pub mod ligand;
pub mod pocket;
pub mod policy;
pub mod reward;
pub mod trioformer;
pub mod verify;

pub use error::{Error, Result};
