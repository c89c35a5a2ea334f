pub mod corpus;
pub mod encoding;
pub mod policy;
pub mod ranker;
pub mod simeval;
pub mod usersim;
pub mod rl;
pub mod synthetic;
pub mod experiment;
pub mod cli;
