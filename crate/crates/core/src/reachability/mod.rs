//! Grid abstraction of the closed loop and forward reachable tubes.

mod cells;
mod graph;
mod tube;

pub use cells::{calibrate_cell_size, CalibrationOptions, CellSpec};
pub use graph::{
    build_cell_graph, cells_inside, cycles_in, find_cycles, live_set, liveness_cells, strongly_connected_components,
    summarize_grid, CellGraph, GridSummary,
};
pub use tube::{forward_tube, TubeReport};
