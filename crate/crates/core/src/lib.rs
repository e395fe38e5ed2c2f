pub mod assembly;
pub mod linalg;
pub mod lognorm;
pub mod scenario;
pub mod simulator;
pub mod stabilizer;
pub mod topology;
