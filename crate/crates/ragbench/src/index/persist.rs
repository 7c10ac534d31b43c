//! On-disk index formats.
//!
//! Sparse: a directory holding `stats.json`, `postings.jsonl` (sorted by
//! term), and `doclens.jsonl` (sorted by chunk id).
//!
//! Dense: one binary file, little-endian — header `{dim: u32, count: u64,
//! mode: u8}`, then per entry a length-prefixed UTF-8 chunk id followed
//! by `dim` float32 values; in HNSW mode the graph's adjacency lists are
//! appended after the vectors.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backend::EmbeddingVector;
use crate::error::{RagError, Result};

use super::hnsw::HnswGraph;
use super::{DenseIndex, DenseMode, HnswParams, SparseIndex};

#[derive(Serialize, Deserialize)]
struct SparseStats {
    n: usize,
    avgdl: f64,
}

#[derive(Serialize, Deserialize)]
struct PostingLine {
    term: String,
    postings: Vec<(String, u32)>,
}

#[derive(Serialize, Deserialize)]
struct DoclenLine {
    chunk_id: String,
    len: u32,
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> RagError + '_ {
    move |e| RagError::io(path.display().to_string(), e)
}

pub fn save_sparse(dir: &Path, index: &SparseIndex) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;

    let stats_path = dir.join("stats.json");
    let stats = SparseStats {
        n: index.doc_count(),
        avgdl: index.avgdl(),
    };
    std::fs::write(&stats_path, serde_json::to_string_pretty(&stats).unwrap())
        .map_err(io_err(&stats_path))?;

    let postings_path = dir.join("postings.jsonl");
    let mut w = BufWriter::new(File::create(&postings_path).map_err(io_err(&postings_path))?);
    for (term, postings) in index.postings() {
        let line = PostingLine {
            term: term.clone(),
            postings: postings.clone(),
        };
        writeln!(w, "{}", serde_json::to_string(&line).unwrap()).map_err(io_err(&postings_path))?;
    }
    w.flush().map_err(io_err(&postings_path))?;

    let doclens_path = dir.join("doclens.jsonl");
    let mut w = BufWriter::new(File::create(&doclens_path).map_err(io_err(&doclens_path))?);
    for id in index.chunk_ids() {
        let line = DoclenLine {
            chunk_id: id.to_string(),
            len: index.doc_len(id).unwrap(),
        };
        writeln!(w, "{}", serde_json::to_string(&line).unwrap()).map_err(io_err(&doclens_path))?;
    }
    w.flush().map_err(io_err(&doclens_path))?;
    Ok(())
}

pub fn load_sparse(dir: &Path) -> Result<SparseIndex> {
    let stats_path = dir.join("stats.json");
    let stats: SparseStats = serde_json::from_str(
        &std::fs::read_to_string(&stats_path).map_err(io_err(&stats_path))?,
    )
    .map_err(|e| RagError::DataIntegrity(format!("bad stats.json: {e}")))?;

    let postings_path = dir.join("postings.jsonl");
    let reader = BufReader::new(File::open(&postings_path).map_err(io_err(&postings_path))?);
    let mut postings = BTreeMap::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err(&postings_path))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: PostingLine = serde_json::from_str(&line).map_err(|e| RagError::Parse {
            line: lineno + 1,
            message: e.to_string(),
        })?;
        postings.insert(parsed.term, parsed.postings);
    }

    let doclens_path = dir.join("doclens.jsonl");
    let reader = BufReader::new(File::open(&doclens_path).map_err(io_err(&doclens_path))?);
    let mut doclen = BTreeMap::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err(&doclens_path))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: DoclenLine = serde_json::from_str(&line).map_err(|e| RagError::Parse {
            line: lineno + 1,
            message: e.to_string(),
        })?;
        doclen.insert(parsed.chunk_id, parsed.len);
    }

    if doclen.len() != stats.n {
        return Err(RagError::DataIntegrity(format!(
            "doclens has {} entries but stats.n = {}",
            doclen.len(),
            stats.n
        )));
    }
    Ok(SparseIndex::from_parts(stats.n, stats.avgdl, postings, doclen))
}

fn write_u32(w: &mut impl Write, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn write_u64(w: &mut impl Write, v: u64) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn read_u32(r: &mut impl Read) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> std::io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f32(r: &mut impl Read) -> std::io::Result<f32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(f32::from_le_bytes(b))
}

pub fn save_dense(path: &Path, index: &DenseIndex) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
    let mut run = || -> std::io::Result<()> {
        write_u32(&mut w, index.dim() as u32)?;
        write_u64(&mut w, index.len() as u64)?;
        w.write_all(&[match index.mode() {
            DenseMode::Exact => 0u8,
            DenseMode::Hnsw => 1u8,
        }])?;
        for (id, vec) in index.ids().iter().zip(index.vectors()) {
            write_u32(&mut w, id.len() as u32)?;
            w.write_all(id.as_bytes())?;
            for v in vec.values() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        if let Some(graph) = index.graph() {
            let params = index.params();
            write_u32(&mut w, params.m as u32)?;
            write_u32(&mut w, params.ef_construction as u32)?;
            write_u32(&mut w, params.ef_search as u32)?;
            write_u32(&mut w, graph.entry)?;
            write_u32(&mut w, graph.max_level as u32)?;
            for levels in &graph.neighbors {
                write_u32(&mut w, levels.len() as u32)?;
                for level in levels {
                    write_u32(&mut w, level.len() as u32)?;
                    for &nb in level {
                        write_u32(&mut w, nb)?;
                    }
                }
            }
        }
        w.flush()
    };
    run().map_err(io_err(path))
}

pub fn load_dense(path: &Path) -> Result<DenseIndex> {
    let mut r = BufReader::new(File::open(path).map_err(io_err(path))?);
    let run = |r: &mut BufReader<File>| -> std::io::Result<DenseIndex> {
        let dim = read_u32(r)? as usize;
        let count = read_u64(r)? as usize;
        let mut mode_byte = [0u8; 1];
        r.read_exact(&mut mode_byte)?;
        let mode = if mode_byte[0] == 1 {
            DenseMode::Hnsw
        } else {
            DenseMode::Exact
        };
        let mut ids = Vec::with_capacity(count);
        let mut vectors = Vec::with_capacity(count);
        for _ in 0..count {
            let len = read_u32(r)? as usize;
            let mut id = vec![0u8; len];
            r.read_exact(&mut id)?;
            ids.push(String::from_utf8_lossy(&id).to_string());
            let mut values = Vec::with_capacity(dim);
            for _ in 0..dim {
                values.push(read_f32(r)?);
            }
            vectors.push(EmbeddingVector::from_unit_values(values));
        }
        let (params, graph) = if mode == DenseMode::Hnsw && count > 0 {
            let m = read_u32(r)? as usize;
            let ef_construction = read_u32(r)? as usize;
            let ef_search = read_u32(r)? as usize;
            let entry = read_u32(r)?;
            let max_level = read_u32(r)? as usize;
            let mut neighbors = Vec::with_capacity(count);
            for _ in 0..count {
                let n_levels = read_u32(r)? as usize;
                let mut levels = Vec::with_capacity(n_levels);
                for _ in 0..n_levels {
                    let n_nb = read_u32(r)? as usize;
                    let mut nbs = Vec::with_capacity(n_nb);
                    for _ in 0..n_nb {
                        nbs.push(read_u32(r)?);
                    }
                    levels.push(nbs);
                }
                neighbors.push(levels);
            }
            (
                HnswParams {
                    m,
                    ef_construction,
                    ef_search,
                },
                Some(HnswGraph {
                    m,
                    ef_construction,
                    entry,
                    max_level,
                    neighbors,
                }),
            )
        } else {
            (HnswParams::default(), None)
        };
        Ok(DenseIndex::from_loaded_parts(ids, vectors, mode, params, graph))
    };
    run(&mut r).map_err(io_err(path))
}
