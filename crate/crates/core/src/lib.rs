pub mod birthdeath;
pub mod dirichlet;
pub mod localgame;
pub mod model;
pub mod montecarlo;
pub mod shapley;
pub mod numeric;
pub mod report;

pub use localgame::{LocalGame, LocalSaddle, SaddleOptions};
pub use model::{GameModel, ModelBuilder, ModelError, Player, StationaryStrategy};
