pub mod agent;
pub mod builder;
pub mod config;
pub mod dialog;
pub mod engine;
pub mod events;
pub mod forgetting;
pub mod lm;
pub mod rules;
pub mod text;
pub mod time;
pub mod tree;
