//! Checkpoint serialization: named tensors with shape headers under named
//! stores, values encoded as hex f64 bits so round-trips are bit-exact.
//!
//! ```text
//! coride-checkpoint v1
//! store worker_actor
//! tensor rnn.w_ih 64 73
//! 3fe0000000000000 bff0000000000000 ...
//! end
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::CoreError;

use super::{Matrix, ParamStore};

pub const FORMAT_HEADER: &str = "coride-checkpoint v1";

pub fn to_string(stores: &[(&str, &ParamStore)]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{FORMAT_HEADER}");
    for (store_name, store) in stores {
        let _ = writeln!(out, "store {store_name}");
        for (name, param) in store.iter() {
            let _ = writeln!(
                out,
                "tensor {name} {} {}",
                param.value.rows, param.value.cols
            );
            for r in 0..param.value.rows {
                let row: Vec<String> = (0..param.value.cols)
                    .map(|c| format!("{:016x}", param.value.get(r, c).to_bits()))
                    .collect();
                let _ = writeln!(out, "{}", row.join(" "));
            }
        }
        let _ = writeln!(out, "end");
    }
    out
}

pub fn save(stores: &[(&str, &ParamStore)], path: &Path) -> Result<(), CoreError> {
    fs::write(path, to_string(stores)).map_err(|e| CoreError::io(path.display().to_string(), e))
}

pub fn from_string(text: &str) -> Result<BTreeMap<String, ParamStore>, CoreError> {
    let mut lines = text.lines();
    match lines.next() {
        Some(l) if l.trim() == FORMAT_HEADER => {}
        other => {
            return Err(CoreError::Checkpoint(format!(
                "expected header `{FORMAT_HEADER}`, got `{}`",
                other.unwrap_or("<eof>")
            )))
        }
    }

    let mut stores = BTreeMap::new();
    let mut current: Option<(String, ParamStore)> = None;
    let mut pending: Option<(String, usize, usize, Vec<f64>)> = None;

    fn flush_tensor(
        store: &mut ParamStore,
        pending: &mut Option<(String, usize, usize, Vec<f64>)>,
    ) -> Result<(), CoreError> {
        if let Some((name, rows, cols, data)) = pending.take() {
            if data.len() != rows * cols {
                return Err(CoreError::Checkpoint(format!(
                    "tensor `{name}` expected {} values, got {}",
                    rows * cols,
                    data.len()
                )));
            }
            store.register(&name, Matrix::from_vec(rows, cols, data));
        }
        Ok(())
    }

    for line in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix("store ") {
            if current.is_some() {
                return Err(CoreError::Checkpoint("nested `store` block".into()));
            }
            current = Some((rest.trim().to_string(), ParamStore::new()));
        } else if let Some(rest) = line.strip_prefix("tensor ") {
            let (_, store) = current
                .as_mut()
                .ok_or_else(|| CoreError::Checkpoint("tensor outside a store block".into()))?;
            flush_tensor(store, &mut pending)?;
            let parts: Vec<&str> = rest.split_whitespace().collect();
            if parts.len() != 3 {
                return Err(CoreError::Checkpoint(format!("bad tensor header `{rest}`")));
            }
            let rows = parts[1]
                .parse::<usize>()
                .map_err(|_| CoreError::Checkpoint(format!("bad row count in `{rest}`")))?;
            let cols = parts[2]
                .parse::<usize>()
                .map_err(|_| CoreError::Checkpoint(format!("bad col count in `{rest}`")))?;
            pending = Some((
                parts[0].to_string(),
                rows,
                cols,
                Vec::with_capacity(rows * cols),
            ));
        } else if line == "end" {
            let (name, mut store) = current
                .take()
                .ok_or_else(|| CoreError::Checkpoint("`end` outside a store block".into()))?;
            flush_tensor(&mut store, &mut pending)?;
            stores.insert(name, store);
        } else {
            let (_, _, _, data) = pending
                .as_mut()
                .ok_or_else(|| CoreError::Checkpoint(format!("unexpected line `{line}`")))?;
            for tok in line.split_whitespace() {
                let bits = u64::from_str_radix(tok, 16)
                    .map_err(|_| CoreError::Checkpoint(format!("bad value `{tok}`")))?;
                data.push(f64::from_bits(bits));
            }
        }
    }
    if current.is_some() {
        return Err(CoreError::Checkpoint("unterminated store block".into()));
    }
    Ok(stores)
}

pub fn load(path: &Path) -> Result<BTreeMap<String, ParamStore>, CoreError> {
    let text =
        fs::read_to_string(path).map_err(|e| CoreError::io(path.display().to_string(), e))?;
    from_string(&text)
}
