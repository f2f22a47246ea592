// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

//! Layered incremental graph processing.
//!
//! Vertex-centric accumulative algorithms are evaluated on a directed graph
//! that is split into dense subgraphs and an upper layer. Each subgraph keeps
//! shortcuts from its entry vertices to all of its members, so that a batch of
//! graph updates can be propagated over the small upper layer and only then
//! pushed down into the subgraphs.

// `!(a < b)` on f64 is deliberate: NaN never counts as an improvement.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod algo;
pub mod container;
pub mod engine;
pub mod error;
pub mod fixture;
pub mod generators;
pub mod graph;
pub mod incremental;
pub mod layering;
pub mod network;
pub mod shortcuts;

pub use error::{Error, Result};
