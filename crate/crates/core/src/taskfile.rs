//! Reader and writer for the MCO1 task-file container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "MCO1" | version=1 | load_addr | entry | text_size | data_size
//!        | reloc_count | sym_count | reserved=0            (36-byte header)
//! text bytes | data bytes
//! reloc_count x { u8 segment (0=text, 1=data); u32 offset }
//! sym_count   x { u32 value; u8 segment; u8 name_len; name }
//! ```

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"MCO1";
pub const VERSION: u32 = 1;
pub const HEADER_SIZE: usize = 36;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Segment {
    Text,
    Data,
}

impl Segment {
    fn tag(self) -> u8 {
        match self {
            Segment::Text => 0,
            Segment::Data => 1,
        }
    }

    fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Segment::Text),
            1 => Some(Segment::Data),
            _ => None,
        }
    }
}

/// Marks one 32-bit address word.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RelocEntry {
    pub segment: Segment,
    pub offset: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Symbol {
    pub name: String,
    pub segment: Segment,
    pub value: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TaskFile {
    pub load_addr: u32,
    pub entry: u32,
    pub text: Vec<u8>,
    pub data: Vec<u8>,
    pub relocs: Vec<RelocEntry>,
    pub symbols: Vec<Symbol>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TaskFileError {
    #[error("bad magic")]
    BadMagic,
    #[error("unsupported version {0}")]
    UnsupportedVersion(u32),
    #[error("reserved header field is {0:#x}, expected 0")]
    Reserved(u32),
    #[error("truncated {0}")]
    Truncated(&'static str),
    #[error("{0} trailing bytes after symbol table")]
    TrailingBytes(usize),
    #[error("reloc out of range: {segment:?} offset {offset:#x} (segment length {len})")]
    RelocOutOfRange { segment: Segment, offset: u32, len: usize },
    #[error("entry {entry:#x} outside text [{start:#x}, {end:#x})")]
    EntryOutsideText { entry: u32, start: u32, end: u64 },
    #[error("bad segment tag {0}")]
    BadSegment(u8),
    #[error("bad symbol name: {0}")]
    BadSymbol(String),
    #[error("address space overflow")]
    Overflow,
}

impl TaskFile {
    /// Data load address; the data segment follows text with no padding.
    pub fn data_addr(&self) -> u32 {
        self.load_addr.wrapping_add(self.text.len() as u32)
    }

    pub fn segment_len(&self, segment: Segment) -> usize {
        match segment {
            Segment::Text => self.text.len(),
            Segment::Data => self.data.len(),
        }
    }

    pub fn validate(&self) -> Result<(), TaskFileError> {
        let end = self.load_addr as u64 + self.text.len() as u64 + self.data.len() as u64;
        if end > u32::MAX as u64 + 1 {
            return Err(TaskFileError::Overflow);
        }
        let text_end = self.load_addr as u64 + self.text.len() as u64;
        // An empty text segment can only name its own start.
        let entry_ok = if self.text.is_empty() {
            self.entry == self.load_addr
        } else {
            self.entry >= self.load_addr && (self.entry as u64) < text_end
        };
        if !entry_ok {
            return Err(TaskFileError::EntryOutsideText {
                entry: self.entry,
                start: self.load_addr,
                end: text_end,
            });
        }
        for r in &self.relocs {
            let len = self.segment_len(r.segment);
            if r.offset as u64 + 4 > len as u64 {
                return Err(TaskFileError::RelocOutOfRange { segment: r.segment, offset: r.offset, len });
            }
        }
        for s in &self.symbols {
            if s.name.is_empty() || s.name.len() > 255 {
                return Err(TaskFileError::BadSymbol(s.name.clone()));
            }
        }
        Ok(())
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], TaskFileError> {
        let end = self.at.checked_add(n).ok_or(TaskFileError::Truncated(what))?;
        let s = self.bytes.get(self.at..end).ok_or(TaskFileError::Truncated(what))?;
        self.at = end;
        Ok(s)
    }

    fn u8(&mut self, what: &'static str) -> Result<u8, TaskFileError> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, TaskFileError> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn read_task(bytes: &[u8]) -> Result<TaskFile, TaskFileError> {
    let mut r = Reader { bytes, at: 0 };
    if r.take(4, "header").map_err(|_| TaskFileError::BadMagic)? != MAGIC {
        return Err(TaskFileError::BadMagic);
    }
    let version = r.u32("header")?;
    if version != VERSION {
        return Err(TaskFileError::UnsupportedVersion(version));
    }
    let load_addr = r.u32("header")?;
    let entry = r.u32("header")?;
    let text_size = r.u32("header")? as usize;
    let data_size = r.u32("header")? as usize;
    let reloc_count = r.u32("header")? as usize;
    let sym_count = r.u32("header")? as usize;
    let reserved = r.u32("header")?;
    if reserved != 0 {
        return Err(TaskFileError::Reserved(reserved));
    }
    let text = r.take(text_size, "text segment")?.to_vec();
    let data = r.take(data_size, "data segment")?.to_vec();
    let mut relocs = Vec::with_capacity(reloc_count.min(bytes.len() / 5));
    for _ in 0..reloc_count {
        let tag = r.u8("relocation table")?;
        let segment = Segment::from_tag(tag).ok_or(TaskFileError::BadSegment(tag))?;
        let offset = r.u32("relocation table")?;
        relocs.push(RelocEntry { segment, offset });
    }
    let mut symbols = Vec::with_capacity(sym_count.min(bytes.len() / 7));
    for _ in 0..sym_count {
        let value = r.u32("symbol table")?;
        let tag = r.u8("symbol table")?;
        let segment = Segment::from_tag(tag).ok_or(TaskFileError::BadSegment(tag))?;
        let len = r.u8("symbol table")? as usize;
        let raw = r.take(len, "symbol table")?;
        let name = String::from_utf8(raw.to_vec())
            .map_err(|_| TaskFileError::BadSymbol(String::from_utf8_lossy(raw).into_owned()))?;
        symbols.push(Symbol { name, segment, value });
    }
    if r.at != bytes.len() {
        return Err(TaskFileError::TrailingBytes(bytes.len() - r.at));
    }
    let tf = TaskFile { load_addr, entry, text, data, relocs, symbols };
    tf.validate()?;
    Ok(tf)
}

pub fn write_task(tf: &TaskFile) -> Result<Vec<u8>, TaskFileError> {
    tf.validate()?;
    let sym_bytes: usize = tf.symbols.iter().map(|s| 6 + s.name.len()).sum();
    let mut out =
        Vec::with_capacity(HEADER_SIZE + tf.text.len() + tf.data.len() + 5 * tf.relocs.len() + sym_bytes);
    out.extend_from_slice(MAGIC);
    for v in [
        VERSION,
        tf.load_addr,
        tf.entry,
        tf.text.len() as u32,
        tf.data.len() as u32,
        tf.relocs.len() as u32,
        tf.symbols.len() as u32,
        0,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&tf.text);
    out.extend_from_slice(&tf.data);
    for r in &tf.relocs {
        out.push(r.segment.tag());
        out.extend_from_slice(&r.offset.to_le_bytes());
    }
    for s in &tf.symbols {
        out.extend_from_slice(&s.value.to_le_bytes());
        out.push(s.segment.tag());
        out.push(s.name.len() as u8);
        out.extend_from_slice(s.name.as_bytes());
    }
    Ok(out)
}
