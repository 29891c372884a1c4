//! Version-stamped snapshot files, `tree-<version>.emt`, newest few kept.

use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use emtree_core::tree::{read_tree, write_tree, CodecError, HistoryTree};

#[derive(Clone, Debug)]
pub struct SnapshotStore {
    dir: PathBuf,
    keep: usize,
}

fn version_of(path: &Path) -> Option<u64> {
    let name = path.file_name()?.to_str()?;
    name.strip_prefix("tree-")?.strip_suffix(".emt")?.parse().ok()
}

impl SnapshotStore {
    pub fn open(dir: impl Into<PathBuf>, keep: usize) -> std::io::Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(SnapshotStore { dir, keep: keep.max(1) })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Stored versions, newest first.
    pub fn versions(&self) -> std::io::Result<Vec<(u64, PathBuf)>> {
        let mut out: Vec<(u64, PathBuf)> = fs::read_dir(&self.dir)?
            .filter_map(|e| e.ok())
            .filter_map(|e| version_of(&e.path()).map(|v| (v, e.path())))
            .collect();
        out.sort_by(|a, b| b.0.cmp(&a.0));
        Ok(out)
    }

    /// Writes to a temporary file and renames it into place, so a crash
    /// leaves either the old set of files or the new one.
    pub fn save(&self, tree: &HistoryTree) -> Result<PathBuf, CodecError> {
        let path = self.dir.join(format!("tree-{:010}.emt", tree.version()));
        let tmp = self.dir.join(format!(".tree-{:010}.tmp", tree.version()));
        {
            let f = fs::File::create(&tmp)?;
            let mut w = BufWriter::new(f);
            write_tree(tree, &mut w)?;
            w.flush()?;
            w.get_ref().sync_all()?;
        }
        fs::rename(&tmp, &path)?;
        for (_, old) in self.versions()?.into_iter().skip(self.keep) {
            let _ = fs::remove_file(old);
        }
        Ok(path)
    }

    /// The newest snapshot that reads back cleanly.
    pub fn load_latest(&self) -> Option<HistoryTree> {
        for (v, path) in self.versions().ok()? {
            match fs::File::open(&path).map_err(CodecError::from).and_then(|f| read_tree(BufReader::new(f))) {
                Ok(t) => return Some(t),
                Err(e) => tracing::warn!("snapshot {v} unreadable, trying an older one: {e}"),
            }
        }
        None
    }
}
