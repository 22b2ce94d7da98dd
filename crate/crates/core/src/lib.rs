//! Multi-cell mobile edge computing simulator with DAG-structured
//! applications, grouped-knapsack channel allocation and a dueling double
//! deep-Q offloading agent.

pub mod agent;
pub mod baselines;
pub mod config;
pub mod cost;
pub mod dag;
pub mod dca;
pub mod env;
pub mod error;
pub mod experiment;
pub mod priority;
pub mod radio;
pub mod report;
pub mod selftest;
pub mod trace;

pub use error::{Result, SimError};
