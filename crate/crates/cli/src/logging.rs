//! JSON-lines logging on stderr.

use std::io::Write;

/// One JSON object per record: `{"level", "target", "msg"}`. The filter
/// comes from `RUST_LOG` and defaults to `info`.
pub fn init() {
    let env = env_logger::Env::default().default_filter_or("info");
    let _ = env_logger::Builder::from_env(env)
        .format(|buf, record| {
            let line = serde_json::json!({
                "level": record.level().as_str().to_ascii_lowercase(),
                "target": record.target(),
                "msg": record.args().to_string(),
            });
            writeln!(buf, "{line}")
        })
        .try_init();
}

/// Appends serializable records to a `.jsonl` file.
pub struct JsonLines {
    out: std::io::BufWriter<std::fs::File>,
}

impl JsonLines {
    pub fn create(path: &std::path::Path) -> anyhow::Result<Self> {
        Ok(Self {
            out: std::io::BufWriter::new(std::fs::File::create(path)?),
        })
    }

    pub fn write(&mut self, record: &impl serde::Serialize) -> anyhow::Result<()> {
        serde_json::to_writer(&mut self.out, record)?;
        self.out.write_all(b"\n")?;
        Ok(())
    }

    pub fn finish(mut self) -> anyhow::Result<()> {
        self.out.flush()?;
        Ok(())
    }
}
