pub mod evaluate;
pub mod parse;
pub mod preprocess;
pub mod simulate;
pub mod synth;
pub mod tokenize;
pub mod train;
