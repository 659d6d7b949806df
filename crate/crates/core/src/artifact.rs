//! Versioned JSON envelopes for trained models.

use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::{DeserializeOwned, IgnoredAny};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ArtifactError {
    #[error("missing artifact {0}")]
    Missing(PathBuf),
    #[error("{path}: schema version {found}, expected {SCHEMA_VERSION}")]
    SchemaMismatch { path: PathBuf, found: u32 },
    #[error("{path}: holds a `{found}` artifact, expected `{expected}`")]
    KindMismatch {
        path: PathBuf,
        found: String,
        expected: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
}

#[derive(Serialize)]
struct EnvelopeRef<'a, T> {
    schema_version: u32,
    kind: &'a str,
    payload: &'a T,
}

#[derive(Deserialize)]
struct Header {
    schema_version: u32,
    kind: String,
    #[allow(dead_code)]
    payload: IgnoredAny,
}

#[derive(Deserialize)]
struct Envelope<T> {
    payload: T,
}

pub fn save<T: Serialize>(path: &Path, kind: &str, payload: &T) -> Result<(), ArtifactError> {
    let io = |source| ArtifactError::Io {
        path: path.to_path_buf(),
        source,
    };
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io)?;
    }
    let file = fs::File::create(path).map_err(io)?;
    let mut w = BufWriter::new(file);
    let env = EnvelopeRef {
        schema_version: SCHEMA_VERSION,
        kind,
        payload,
    };
    serde_json::to_writer(&mut w, &env).map_err(|source| ArtifactError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    w.write_all(b"\n").map_err(io)?;
    w.flush().map_err(io)
}

pub fn load<T: DeserializeOwned>(path: &Path, kind: &str) -> Result<T, ArtifactError> {
    if !path.exists() {
        return Err(ArtifactError::Missing(path.to_path_buf()));
    }
    let read = || -> Result<BufReader<fs::File>, ArtifactError> {
        let f = fs::File::open(path).map_err(|source| ArtifactError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(BufReader::new(f))
    };
    let json = |source| ArtifactError::Json {
        path: path.to_path_buf(),
        source,
    };
    let header: Header = serde_json::from_reader(read()?).map_err(json)?;
    if header.schema_version != SCHEMA_VERSION {
        return Err(ArtifactError::SchemaMismatch {
            path: path.to_path_buf(),
            found: header.schema_version,
        });
    }
    if header.kind != kind {
        return Err(ArtifactError::KindMismatch {
            path: path.to_path_buf(),
            found: header.kind,
            expected: kind.to_string(),
        });
    }
    let env: Envelope<T> = serde_json::from_reader(read()?).map_err(json)?;
    Ok(env.payload)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_rejections() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub/w.json");
        save(&path, "weights", &vec![1.5f64, -0.25]).unwrap();
        let back: Vec<f64> = load(&path, "weights").unwrap();
        assert_eq!(back, vec![1.5, -0.25]);
        assert!(matches!(
            load::<Vec<f64>>(&path, "knn"),
            Err(ArtifactError::KindMismatch { .. })
        ));
        fs::write(
            &path,
            r#"{"schema_version":99,"kind":"weights","payload":[1.0]}"#,
        )
        .unwrap();
        assert!(matches!(
            load::<Vec<f64>>(&path, "weights"),
            Err(ArtifactError::SchemaMismatch { found: 99, .. })
        ));
        assert!(matches!(
            load::<Vec<f64>>(&dir.path().join("none.json"), "weights"),
            Err(ArtifactError::Missing(_))
        ));
    }
}
