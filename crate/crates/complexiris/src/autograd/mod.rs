//! Tape-based reverse-mode differentiation and the Nesterov SGD
//! optimizer with gradient clipping and a learning-rate schedule.

mod gradcheck;
mod ops;
mod optim;
mod tape;

pub use gradcheck::{gradcheck_suite, CheckOutcome, Fault, GRADCHECK_STEP, GRADCHECK_TOLERANCE};
pub use optim::{sgd_step, LrSchedule, OptimState};
pub use tape::{GradFn, Gradients, Tape, Var};
