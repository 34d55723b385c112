pub mod checker;
pub mod frontend;
pub mod lf;
pub mod pipeline;
pub mod syntax;
pub mod twam;
pub mod vm;
