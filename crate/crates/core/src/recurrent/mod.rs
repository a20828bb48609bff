//! LSTM cell with exact backward pass, stacked recurrence, sentence encoding
//! and step-wise decoding through a softmax or cosine output head.

pub mod decode;
pub mod lstm;
pub mod stack;

pub use decode::{
    decode_step, generate, DecodeMode, DecodeOutput, HeadKind, OutputHead, DEFAULT_MAX_LEN,
    MIN_TEMPERATURE,
};
pub use lstm::{lstm_cell_backward, lstm_cell_forward, LstmParams, LstmState, StateGrad, StepCache};
pub use stack::{encode_sequence, RnnStack, StackCache};
