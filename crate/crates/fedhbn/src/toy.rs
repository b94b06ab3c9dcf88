//! The two-cluster toy as plot-ready CSV.

use std::path::Path;

use fedhbn_core::data::toy::{mean_distance, Cov2, Point};
use fedhbn_core::data::{cluster_panels, make_two_cluster_toy, ClusterPanels};
use serde::Serialize;

use crate::error::Result;
use crate::sweep::write_csv;

pub const TOY_POINTS: usize = 500;
pub const TOY_MEANS: [Point; 2] = [[-2.0, 1.0], [3.0, -0.5]];
pub const TOY_COVS: [Cov2; 2] = [[[1.0, 0.3], [0.3, 0.5]], [[0.6, -0.2], [-0.2, 1.2]]];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ToyRow {
    pub panel: &'static str,
    pub cluster: usize,
    pub x: f64,
    pub y: f64,
}

/// Distance between the two cluster means in each panel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyDistances {
    pub raw: f64,
    pub local: f64,
    pub global: f64,
    pub hybrid: f64,
}

impl ToyDistances {
    pub fn of(p: &ClusterPanels) -> Self {
        Self {
            raw: mean_distance(&p.raw),
            local: mean_distance(&p.local),
            global: mean_distance(&p.global),
            hybrid: mean_distance(&p.hybrid),
        }
    }
}

pub fn toy_panels(seed: u64) -> Result<ClusterPanels> {
    let (a, b) = make_two_cluster_toy(TOY_POINTS, TOY_MEANS, TOY_COVS, seed)?;
    Ok(cluster_panels(&a, &b)?)
}

pub fn toy_rows(p: &ClusterPanels) -> Vec<ToyRow> {
    let mut rows = Vec::new();
    for (panel, clusters) in p.panels() {
        for (cluster, points) in clusters.iter().enumerate() {
            rows.extend(points.iter().map(|&[x, y]| ToyRow {
                panel,
                cluster,
                x,
                y,
            }));
        }
    }
    rows
}

/// Writes `panel,cluster,x,y` rows for the raw, local, global and hybrid panels.
pub fn write_toy_csv(path: &Path, p: &ClusterPanels) -> Result<()> {
    write_csv(path, &toy_rows(p))
}
