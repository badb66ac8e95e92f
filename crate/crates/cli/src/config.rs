//! Plain-text `key = value` settings shared by the CLI and the server.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use convis_core::encoder::BackendSpec;
use convis_core::saliency::{BoundaryPolicy, WindowMode};
use convis_core::store::CacheDir;
use convis_core::SaliencyConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackendKind {
    MockHash,
    Fixture,
    Remote,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub bind: String,
    pub port: u16,
    pub lexicon_path: Option<PathBuf>,
    pub seed_path: Option<PathBuf>,
    pub backend: BackendKind,
    pub dimension: usize,
    pub fixture_path: Option<PathBuf>,
    pub remote_url: Option<String>,
    pub model_id: Option<String>,
    pub input_resolution: Option<u32>,
    pub cache_dir: Option<PathBuf>,
    pub image_dir: Option<PathBuf>,
    pub quiz_path: Option<PathBuf>,
    pub saliency: SaliencyConfig,
    pub request_timeout_secs: u64,
    pub max_upload_bytes: usize,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1".into(),
            port: 8080,
            lexicon_path: None,
            seed_path: None,
            backend: BackendKind::MockHash,
            dimension: 512,
            fixture_path: None,
            remote_url: None,
            model_id: None,
            input_resolution: None,
            cache_dir: None,
            image_dir: None,
            quiz_path: None,
            saliency: SaliencyConfig::default(),
            request_timeout_secs: 120,
            max_upload_bytes: 20 << 20,
        }
    }
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    v.parse().map_err(|e| anyhow!("{key}: {e}"))
}

impl Settings {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        Self::parse(&text, base).with_context(|| format!("in {}", path.display()))
    }

    /// Parses settings text; relative paths resolve against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut s = Settings::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("line {}: expected key = value", n + 1))?;
            s.set(key.trim(), value.trim(), base)
                .with_context(|| format!("line {}", n + 1))?;
        }
        Ok(s)
    }

    pub fn set(&mut self, key: &str, value: &str, base: &Path) -> Result<()> {
        let path = || -> PathBuf {
            let p = Path::new(value);
            if p.is_absolute() {
                p.to_path_buf()
            } else {
                base.join(p)
            }
        };
        match key {
            "bind" => self.bind = value.to_owned(),
            "port" => self.port = num(key, value)?,
            "lexicon_path" => self.lexicon_path = Some(path()),
            "seed_path" => self.seed_path = Some(path()),
            "backend" => self.backend = parse_kind(value)?,
            "dimension" => self.dimension = num(key, value)?,
            "fixture_path" => self.fixture_path = Some(path()),
            "remote_url" => self.remote_url = Some(value.to_owned()),
            "model_id" => self.model_id = Some(value.to_owned()),
            "input_resolution" => self.input_resolution = Some(num(key, value)?),
            "cache_dir" => self.cache_dir = Some(path()),
            "image_dir" => self.image_dir = Some(path()),
            "quiz_path" => self.quiz_path = Some(path()),
            "delta_s" => self.saliency.delta_s = num(key, value)?,
            "delta_l" => self.saliency.delta_l = num(key, value)?,
            "omega" => self.saliency.omega = num(key, value)?,
            "window_mode" => self.saliency.window_mode = value.parse::<WindowMode>().map_err(|e| anyhow!(e))?,
            "boundary_policy" => {
                self.saliency.boundary_policy = value.parse::<BoundaryPolicy>().map_err(|e| anyhow!(e))?
            }
            "request_timeout_secs" => self.request_timeout_secs = num(key, value)?,
            "max_upload_bytes" => self.max_upload_bytes = num(key, value)?,
            other => bail!("unknown setting {other:?}"),
        }
        Ok(())
    }

    /// Applies a `--backend` flag: `mock-hash[:DIM]`, `fixture:PATH` or
    /// `remote:URL`.
    pub fn apply_backend_flag(&mut self, flag: &str) -> Result<()> {
        let (kind, arg) = match flag.split_once(':') {
            Some((k, a)) => (k, Some(a)),
            None => (flag, None),
        };
        self.backend = parse_kind(kind)?;
        match (self.backend, arg) {
            (BackendKind::MockHash, Some(d)) => self.dimension = num("dimension", d)?,
            (BackendKind::Fixture, Some(p)) => self.fixture_path = Some(PathBuf::from(p)),
            (BackendKind::Remote, Some(u)) => self.remote_url = Some(u.to_owned()),
            _ => {}
        }
        Ok(())
    }

    pub fn backend_spec(&self) -> Result<BackendSpec> {
        Ok(match self.backend {
            BackendKind::MockHash => BackendSpec::MockHash {
                dimension: self.dimension,
            },
            BackendKind::Fixture => BackendSpec::Fixture {
                path: self
                    .fixture_path
                    .clone()
                    .ok_or_else(|| anyhow!("backend fixture needs fixture_path"))?,
            },
            BackendKind::Remote => BackendSpec::Remote {
                url: self
                    .remote_url
                    .clone()
                    .ok_or_else(|| anyhow!("backend remote needs remote_url"))?,
                model_id: self
                    .model_id
                    .clone()
                    .ok_or_else(|| anyhow!("backend remote needs model_id"))?,
                dimension: self.dimension,
                input_resolution: self.input_resolution,
            },
        })
    }

    /// Cache location: `CONVIS_CACHE_DIR` wins over the `cache_dir` setting.
    pub fn cache(&self) -> Option<CacheDir> {
        match (&self.cache_dir, std::env::var_os(convis_core::store::CACHE_DIR_ENV)) {
            (_, Some(v)) if !v.is_empty() => Some(CacheDir::new(PathBuf::from(v))),
            (Some(dir), _) => Some(CacheDir::new(dir.clone())),
            _ => None,
        }
    }

    pub fn image_store_dir(&self) -> Option<PathBuf> {
        self.image_dir
            .clone()
            .or_else(|| self.cache().map(|c| c.root().join("images")))
    }
}

fn parse_kind(v: &str) -> Result<BackendKind> {
    match v {
        "mock-hash" | "mock_hash" | "mock" => Ok(BackendKind::MockHash),
        "fixture" => Ok(BackendKind::Fixture),
        "remote" => Ok(BackendKind::Remote),
        other => bail!("unknown backend {other:?} (expected mock-hash, fixture or remote)"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_resolves() {
        let s = Settings::parse(
            "# comment\nport = 9000\nlexicon_path = lex.jsonl\nbackend = fixture # trailing\nfixture_path=/abs/f.json\n\
             delta_s=16\ndelta_l = 32\nomega=8\nwindow_mode=symmetric\nboundary_policy=clamp\n",
            Path::new("/etc/convis"),
        )
        .unwrap();
        assert_eq!(s.port, 9000);
        assert_eq!(s.lexicon_path, Some(PathBuf::from("/etc/convis/lex.jsonl")));
        assert_eq!(s.fixture_path, Some(PathBuf::from("/abs/f.json")));
        assert_eq!(s.backend, BackendKind::Fixture);
        assert_eq!(
            (s.saliency.delta_s, s.saliency.delta_l, s.saliency.omega),
            (16, 32, 8)
        );
        assert_eq!(s.saliency.window_mode, WindowMode::Symmetric);
        assert_eq!(s.saliency.boundary_policy, BoundaryPolicy::Clamp);
    }

    #[test]
    fn rejects_bad_lines() {
        assert!(Settings::parse("port", Path::new("")).is_err());
        assert!(Settings::parse("colour = red", Path::new("")).is_err());
        assert!(Settings::parse("port = many", Path::new("")).is_err());
        assert!(Settings::parse("backend = gpu", Path::new("")).is_err());
    }

    #[test]
    fn backend_flags() {
        let mut s = Settings::default();
        s.apply_backend_flag("mock-hash:32").unwrap();
        assert_eq!(s.backend_spec().unwrap(), BackendSpec::MockHash { dimension: 32 });
        s.apply_backend_flag("fixture:x.json").unwrap();
        assert_eq!(
            s.backend_spec().unwrap(),
            BackendSpec::Fixture {
                path: PathBuf::from("x.json")
            }
        );
        s.apply_backend_flag("remote:http://h:1").unwrap();
        assert!(s.backend_spec().is_err(), "model_id is required");
        s.model_id = Some("m".into());
        assert!(s.backend_spec().is_ok());
    }
}
