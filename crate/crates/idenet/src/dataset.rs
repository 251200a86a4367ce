//! Dataset directories.
//!
//! A network directory holds `edges.csv` (`u,v` plus edge attributes, one row
//! per undirected edge), `nodes.csv` (`id` plus node attributes) and
//! `meta.json`. A dataset directory adds `treatments.csv` (`id,X`),
//! `outcomes.csv` (`id,Y,Y0,Y1,tau_true,exposure_true`) and `gen_config.json`.

use std::path::Path;

use idenet_core::datagen::{GenConfig, GeneratedDataset};
use idenet_core::netgen::{AttributeTable, AttributedNetwork, Column, NetworkSpec};
use idenet_core::numeric::{Matrix, SparseAdjacency};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::files::{num, read_json, write_json, Table};

/// Contents of `meta.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Meta {
    /// `barabasi_albert`, `watts_strogatz` or `semi_synthetic`.
    pub generator: String,
    /// Topology parameters for generated networks.
    pub params: Option<NetworkSpec>,
    pub seed: u64,
    pub num_nodes: usize,
    pub num_edges: usize,
    pub node_columns: Vec<Column>,
    pub edge_columns: Vec<Column>,
}

impl Meta {
    pub fn describe(network: &AttributedNetwork, spec: Option<&NetworkSpec>) -> Self {
        let generator = match spec {
            Some(NetworkSpec::BarabasiAlbert { .. }) => "barabasi_albert",
            Some(NetworkSpec::WattsStrogatz { .. }) => "watts_strogatz",
            None => "semi_synthetic",
        };
        Self {
            generator: generator.to_string(),
            params: spec.cloned(),
            seed: network.seed,
            num_nodes: network.num_nodes(),
            num_edges: network.num_edges(),
            node_columns: network.node_attrs.columns.clone(),
            edge_columns: network.edge_attrs.columns.clone(),
        }
    }
}

pub fn write_network(dir: &Path, network: &AttributedNetwork, meta: &Meta) -> Result<()> {
    let mut header = vec!["u", "v"];
    header.extend(network.edge_attrs.columns.iter().map(|c| c.name.as_str()));
    let mut edges = Table::new(&header);
    for (e, &(u, v)) in network.adjacency.edges().iter().enumerate() {
        let mut row = vec![u.to_string(), v.to_string()];
        row.extend(network.edge_attrs.values.row(e).iter().map(|&x| num(x)));
        edges.push(row);
    }
    edges.write(&dir.join("edges.csv"))?;

    let mut header = vec!["id"];
    header.extend(network.node_attrs.columns.iter().map(|c| c.name.as_str()));
    let mut nodes = Table::new(&header);
    for i in 0..network.num_nodes() {
        let mut row = vec![i.to_string()];
        row.extend(network.node_attrs.values.row(i).iter().map(|&x| num(x)));
        nodes.push(row);
    }
    nodes.write(&dir.join("nodes.csv"))?;
    write_json(&dir.join("meta.json"), meta)
}

fn check_ids(table: &Table, path: &Path, n: usize) -> Result<()> {
    if table.rows.len() != n {
        return Err(Error::parse(path, format!("{} rows, expected {n}", table.rows.len())));
    }
    for r in 0..n {
        let id: usize = table.parse(path, r, 0)?;
        if id != r {
            return Err(Error::parse(path, format!("line {}: id {id} out of order, expected {r}", r + 2)));
        }
    }
    Ok(())
}

fn attribute_table(table: &Table, path: &Path, skip: usize, columns: &[Column]) -> Result<AttributeTable> {
    let names: Vec<&str> = columns.iter().map(|c| c.name.as_str()).collect();
    if table.header[skip..].iter().map(String::as_str).ne(names.iter().copied()) {
        return Err(Error::parse(
            path,
            format!("attribute columns {:?} do not match meta.json {names:?}", &table.header[skip..]),
        ));
    }
    let n = table.rows.len();
    let mut values = Vec::with_capacity(n * columns.len());
    for r in 0..n {
        for c in 0..columns.len() {
            values.push(table.parse::<f64>(path, r, skip + c)?);
        }
    }
    Ok(AttributeTable { columns: columns.to_vec(), values: Matrix::from_vec(n, columns.len(), values) })
}

pub fn read_network(dir: &Path) -> Result<(AttributedNetwork, Meta)> {
    let meta: Meta = read_json(&dir.join("meta.json"))?;
    let path = dir.join("edges.csv");
    let edges = Table::read(&path)?;
    edges.expect_prefix(&path, &["u", "v"])?;
    let mut pairs = Vec::with_capacity(edges.rows.len());
    for r in 0..edges.rows.len() {
        pairs.push((edges.parse::<u32>(&path, r, 0)?, edges.parse::<u32>(&path, r, 1)?));
    }
    let adjacency = SparseAdjacency::from_edges(meta.num_nodes, &pairs)?;
    if adjacency.edges() != pairs.as_slice() {
        return Err(Error::parse(&path, "edges must be listed as sorted (u < v) pairs"));
    }
    let edge_attrs = attribute_table(&edges, &path, 2, &meta.edge_columns)?;

    let path = dir.join("nodes.csv");
    let nodes = Table::read(&path)?;
    nodes.expect_prefix(&path, &["id"])?;
    check_ids(&nodes, &path, meta.num_nodes)?;
    let node_attrs = attribute_table(&nodes, &path, 1, &meta.node_columns)?;
    let network = AttributedNetwork { adjacency, node_attrs, edge_attrs, seed: meta.seed };
    Ok((network, meta))
}

pub fn write_dataset(dir: &Path, data: &GeneratedDataset, meta: &Meta) -> Result<()> {
    write_network(dir, &data.network, meta)?;
    let mut t = Table::new(&["id", "X"]);
    for (i, &x) in data.x.iter().enumerate() {
        t.push(vec![i.to_string(), x.to_string()]);
    }
    t.write(&dir.join("treatments.csv"))?;
    let mut o = Table::new(&["id", "Y", "Y0", "Y1", "tau_true", "exposure_true"]);
    for i in 0..data.num_nodes() {
        o.push(vec![
            i.to_string(),
            num(data.y[i]),
            num(data.y0[i]),
            num(data.y1[i]),
            num(data.tau_true[i]),
            num(data.exposure_true[i]),
        ]);
    }
    o.write(&dir.join("outcomes.csv"))?;
    write_json(&dir.join("gen_config.json"), &data.config)
}

pub fn read_dataset(dir: &Path) -> Result<GeneratedDataset> {
    let (network, meta) = read_network(dir)?;
    let n = meta.num_nodes;
    let config: GenConfig = read_json(&dir.join("gen_config.json"))?;

    let path = dir.join("treatments.csv");
    let t = Table::read(&path)?;
    t.expect_prefix(&path, &["id", "X"])?;
    check_ids(&t, &path, n)?;
    let mut x = Vec::with_capacity(n);
    for r in 0..n {
        let v: u8 = t.parse(&path, r, 1)?;
        if v > 1 {
            return Err(Error::parse(&path, format!("line {}: treatment {v} is not 0 or 1", r + 2)));
        }
        x.push(v);
    }

    let path = dir.join("outcomes.csv");
    let o = Table::read(&path)?;
    o.expect_prefix(&path, &["id", "Y", "Y0", "Y1", "tau_true", "exposure_true"])?;
    check_ids(&o, &path, n)?;
    let col = |c: usize| (0..n).map(|r| o.parse::<f64>(&path, r, c)).collect::<Result<Vec<f64>>>();
    Ok(GeneratedDataset {
        network,
        x,
        y: col(1)?,
        y0: col(2)?,
        y1: col(3)?,
        tau_true: col(4)?,
        exposure_true: col(5)?,
        config,
    })
}

/// Numeric feature matrix from a CSV file with a header row.
pub fn read_features(path: &Path) -> Result<Matrix> {
    let t = Table::read(path)?;
    let (n, d) = (t.rows.len(), t.header.len());
    let mut values = Vec::with_capacity(n * d);
    for r in 0..n {
        for c in 0..d {
            values.push(t.parse::<f64>(path, r, c)?);
        }
    }
    Ok(Matrix::from_vec(n, d, values))
}

/// Undirected edge list from a CSV file whose first two columns are `u,v`.
pub fn read_edge_list(path: &Path, n: usize) -> Result<SparseAdjacency> {
    let t = Table::read(path)?;
    t.expect_prefix(path, &["u", "v"])?;
    let mut pairs = Vec::with_capacity(t.rows.len());
    for r in 0..t.rows.len() {
        pairs.push((t.parse::<u32>(path, r, 0)?, t.parse::<u32>(path, r, 1)?));
    }
    Ok(SparseAdjacency::from_edges(n, &pairs)?)
}
