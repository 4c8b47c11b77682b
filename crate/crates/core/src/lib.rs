pub mod augment;
pub mod data;
pub mod embedding;
pub mod eval;
pub mod http;
pub mod llm;
pub mod mapper;
pub mod nlp;
pub mod parser;
pub mod pipeline;
pub mod record;
pub mod registry;
pub mod retrieval;
pub mod runner;
pub mod synthetic;
pub mod units;
