pub mod assets;
pub mod dual;
pub mod scene;
pub mod weather;
pub mod physics;
pub mod optimizer;
pub mod llm;
pub mod reflection;
pub mod generation;
pub mod evolution;
