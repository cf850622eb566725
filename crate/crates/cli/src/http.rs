use std::fs::File;
use std::path::Path;
use std::time::Duration;

use celestine::dataset::Fetcher;

/// `http://` and `https://` downloads.
pub struct HttpFetcher {
    client: reqwest::blocking::Client,
}

impl HttpFetcher {
    pub fn new() -> anyhow::Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(600))
            .user_agent(concat!("celestine/", env!("CARGO_PKG_VERSION")))
            .build()?;
        Ok(Self { client })
    }
}

impl Fetcher for HttpFetcher {
    fn handles(&self, source: &str) -> bool {
        source.starts_with("http://") || source.starts_with("https://")
    }

    fn fetch(&self, source: &str, dest: &Path) -> Result<u64, String> {
        let mut resp = self
            .client
            .get(source)
            .send()
            .and_then(|r| r.error_for_status())
            .map_err(|e| e.to_string())?;
        let mut file = File::create(dest).map_err(|e| e.to_string())?;
        resp.copy_to(&mut file).map_err(|e| e.to_string())
    }
}
