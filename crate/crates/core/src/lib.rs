pub mod autodiff;
pub mod geom;
pub mod gspn;
pub mod nets;
pub mod scenegen;
pub mod rpointnet;
pub mod eval;
pub mod config;
pub mod pipeline;
