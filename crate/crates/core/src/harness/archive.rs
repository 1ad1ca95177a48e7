//! Model files.
//!
//! ```text
//! magic    8 bytes  "CBDLMDL\0"
//! version  u32      1
//! hlen     u64      length of the JSON header
//! header   hlen bytes of UTF-8 JSON (method, classes, hyperparameters, ...)
//! payload  dictionary matrix (if any), then per machine: support vector
//!          matrix, dual coefficients, bias
//! ```
//!
//! Matrices use the layout of the matrix container (u64 rows, u64 cols,
//! column-major little-endian f64), so every number is stored bit for bit.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::classifier::{BinarySvm, Kernel, OvaSvmModel, SolverDiagnostics};
use crate::dictionary::{dictionary_similarity, GlobalDictionary, Hyperparams};
use crate::error::{Error, Result};
use crate::harness::io::{BinReader, BinWriter};
use crate::harness::model::{FeatureSpec, Method, ModelArchive, Preprocessing};

pub const MODEL_MAGIC: &[u8; 8] = b"CBDLMDL\0";
pub const MODEL_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct MachineHeader {
    kernel: Kernel,
    c: f64,
    support_vectors: usize,
    diagnostics: SolverDiagnostics,
}

#[derive(Serialize, Deserialize)]
struct Header {
    method: Method,
    class_names: Vec<String>,
    feature: Option<FeatureSpec>,
    preprocessing: Preprocessing,
    hyperparams: Option<Hyperparams>,
    c_svm: f64,
    input_dim: usize,
    /// `(C, K′)` when a dictionary follows.
    dictionary: Option<(usize, usize)>,
    machines: Vec<MachineHeader>,
}

pub fn write_model<W: Write>(model: &ModelArchive, out: W) -> Result<W> {
    let header = Header {
        method: model.method,
        class_names: model.class_names.clone(),
        feature: model.feature,
        preprocessing: model.preprocessing.clone(),
        hyperparams: model.hyperparams,
        c_svm: model.c_svm,
        input_dim: model.input_dim(),
        dictionary: model
            .dictionary
            .as_ref()
            .map(|d| (d.num_classes(), d.atoms_per_class())),
        machines: model
            .svm
            .machines
            .iter()
            .map(|m| MachineHeader {
                kernel: m.kernel,
                c: m.c,
                support_vectors: m.support_vectors.nrows(),
                diagnostics: m.diagnostics,
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut w = BinWriter::new(out);
    w.bytes(MODEL_MAGIC)?;
    w.u32(MODEL_VERSION)?;
    w.u64(json.len() as u64)?;
    w.bytes(&json)?;
    if let Some(d) = &model.dictionary {
        w.matrix(d.atoms())?;
    }
    for m in &model.svm.machines {
        w.matrix(m.support_vectors.view())?;
        w.f64s(m.dual_coefs.iter())?;
        w.f64s([m.bias].iter())?;
    }
    Ok(w.into_inner())
}

pub fn read_model<R: Read>(input: R) -> Result<ModelArchive> {
    let mut r = BinReader::new(input, "model");
    let mut magic = [0u8; 8];
    r.bytes(&mut magic)?;
    if &magic != MODEL_MAGIC {
        return Err(Error::CorruptArchive("not a model file (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != MODEL_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: MODEL_VERSION,
        });
    }
    let hlen = r.u64()?;
    if hlen > 1 << 32 {
        return Err(Error::CorruptArchive("implausible header length".into()));
    }
    let mut json = vec![0u8; hlen as usize];
    r.bytes(&mut json)?;
    let header: Header =
        serde_json::from_slice(&json).map_err(|e| Error::CorruptArchive(format!("header: {e}")))?;
    let dictionary = match header.dictionary {
        Some((c, kp)) => {
            let atoms = r.matrix()?;
            Some(
                GlobalDictionary::from_atoms(atoms, c, kp)
                    .map_err(|e| Error::CorruptArchive(format!("dictionary: {e}")))?,
            )
        }
        None => None,
    };
    let svm_dim = match &dictionary {
        Some(d) => d.num_atoms(),
        None => header.input_dim,
    };
    let mut machines = Vec::with_capacity(header.machines.len());
    for mh in &header.machines {
        let sv: Array2<f64> = r.matrix()?;
        if sv.dim() != (mh.support_vectors, svm_dim) {
            return Err(Error::CorruptArchive(format!(
                "support vectors are {:?}, expected {:?}",
                sv.dim(),
                (mh.support_vectors, svm_dim)
            )));
        }
        let coefs = Array1::from(r.f64_vec(mh.support_vectors)?);
        let bias = r.f64()?;
        machines.push(BinarySvm::from_parts(mh.kernel, mh.c, sv, coefs, bias, mh.diagnostics));
    }
    r.finish()?;
    if machines.len() != header.class_names.len() {
        return Err(Error::CorruptArchive(format!(
            "{} machines for {} classes",
            machines.len(),
            header.class_names.len()
        )));
    }
    Ok(ModelArchive {
        method: header.method,
        class_names: header.class_names,
        feature: header.feature,
        preprocessing: header.preprocessing,
        hyperparams: header.hyperparams,
        dictionary,
        c_svm: header.c_svm,
        svm: OvaSvmModel { machines },
    })
}

pub fn save_model(model: &ModelArchive, path: &Path) -> Result<()> {
    write_model(model, BufWriter::new(File::create(path)?))?.flush()?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<ModelArchive> {
    read_model(BufReader::new(File::open(path)?))
}

/// C × C similarity of the class dictionaries, with class names as the
/// header row and first column.
pub fn export_similarity(model: &ModelArchive, path: &Path) -> Result<()> {
    let dict = model
        .dictionary
        .as_ref()
        .ok_or_else(|| Error::InvalidParam("model has no dictionaries".into()))?;
    let sim = dictionary_similarity(dict);
    let mut w = csv::Writer::from_path(path)?;
    let mut head = vec![String::new()];
    head.extend(model.class_names.iter().cloned());
    w.write_record(&head)?;
    for (name, row) in model.class_names.iter().zip(sim.rows()) {
        let mut rec = vec![name.clone()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
