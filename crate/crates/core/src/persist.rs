//! Versioned JSON documents for specs, classifiers and estimators.
//!
//! Every document is an object `{"schema": <name>, "version": <n>, ...}`;
//! readers reject other schemas and newer versions.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::Estimator;
use crate::predictors::Model;
use crate::scm::ScmSpec;

pub const VERSION: u32 = 1;

pub const SCM_SCHEMA: &str = "trecourse.scm";
pub const MODEL_SCHEMA: &str = "trecourse.model";
pub const ESTIMATOR_SCHEMA: &str = "trecourse.estimator";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document<T> {
    pub schema: String,
    pub version: u32,
    pub body: T,
}

/// Where an estimator came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub cutoff: usize,
    /// Hex digest of the training data.
    pub data_hash: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorBody {
    pub provenance: Provenance,
    pub estimator: Estimator,
}

fn write<T: Serialize>(schema: &str, body: &T) -> Result<String> {
    #[derive(Serialize)]
    struct Out<'a, T> {
        schema: &'a str,
        version: u32,
        body: &'a T,
    }
    serde_json::to_string_pretty(&Out { schema, version: VERSION, body })
        .map_err(|e| Error::InvalidArgument(format!("serialization failed: {e}")))
}

fn read<T: DeserializeOwned>(schema: &str, text: &str) -> Result<T> {
    #[derive(Deserialize)]
    struct Header {
        schema: String,
        version: u32,
    }
    let bad = |e: serde_json::Error| Error::InvalidSpec(format!("malformed {schema} document: {e}"));
    let header: Header = serde_json::from_str(text).map_err(bad)?;
    if header.schema != schema {
        return Err(Error::InvalidSpec(format!("expected schema `{schema}`, found `{}`", header.schema)));
    }
    if header.version > VERSION {
        return Err(Error::InvalidSpec(format!("{schema} version {} is newer than {VERSION}", header.version)));
    }
    let doc: Document<T> = serde_json::from_str(text).map_err(bad)?;
    Ok(doc.body)
}

pub fn scm_to_json(scm: &ScmSpec) -> Result<String> {
    write(SCM_SCHEMA, scm)
}

pub fn scm_from_json(text: &str) -> Result<ScmSpec> {
    read(SCM_SCHEMA, text)
}

pub fn model_to_json(model: &Model) -> Result<String> {
    write(MODEL_SCHEMA, model)
}

pub fn model_from_json(text: &str) -> Result<Model> {
    read(MODEL_SCHEMA, text)
}

pub fn estimator_to_json(body: &EstimatorBody) -> Result<String> {
    write(ESTIMATOR_SCHEMA, body)
}

pub fn estimator_from_json(text: &str) -> Result<EstimatorBody> {
    read(ESTIMATOR_SCHEMA, text)
}
