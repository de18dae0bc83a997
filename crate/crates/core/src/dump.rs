//! Streaming reader for MediaWiki history TSV dumps.
//!
//! Each dump line is one event with a fixed set of tab-separated columns. Only
//! revision-creation events in the article namespace (ns0) survive. Files may
//! be plain, gzip- or bzip2-compressed; the compression is sniffed from the
//! leading magic bytes, not the file extension.
//!
//! Columns are looked up by name. The published dumps carry no header row, so
//! the default [`DumpSchema`] lists the documented column order; a file whose
//! first line starts with `wiki_db` supplies its own header instead.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs::File;
use std::io::{self, BufRead, BufReader, Read};
use std::path::Path;

use chrono::{DateTime, NaiveDate, NaiveDateTime, TimeZone, Utc};
use chrono_tz::Tz;
use serde::{Deserialize, Serialize};

use crate::profile::{LanguageProfile, ProfileError};

/// Column layout of the MediaWiki history dump, in file order.
pub const MEDIAWIKI_HISTORY_COLUMNS: [&str; 70] = [
    "wiki_db",
    "event_entity",
    "event_type",
    "event_timestamp",
    "event_comment",
    "event_user_id",
    "event_user_text_historical",
    "event_user_text",
    "event_user_blocks_historical",
    "event_user_blocks",
    "event_user_groups_historical",
    "event_user_groups",
    "event_user_is_bot_by_historical",
    "event_user_is_bot_by",
    "event_user_is_created_by_self",
    "event_user_is_created_by_system",
    "event_user_is_created_by_peer",
    "event_user_is_anonymous",
    "event_user_registration_timestamp",
    "event_user_creation_timestamp",
    "event_user_first_edit_timestamp",
    "event_user_revision_count",
    "event_user_seconds_since_previous_revision",
    "page_id",
    "page_title_historical",
    "page_title",
    "page_namespace_historical",
    "page_namespace_is_content_historical",
    "page_namespace",
    "page_namespace_is_content",
    "page_is_redirect",
    "page_is_deleted",
    "page_creation_timestamp",
    "page_first_edit_timestamp",
    "page_revision_count",
    "page_seconds_since_previous_revision",
    "user_id",
    "user_text_historical",
    "user_text",
    "user_blocks_historical",
    "user_blocks",
    "user_groups_historical",
    "user_groups",
    "user_is_bot_by_historical",
    "user_is_bot_by",
    "user_is_created_by_self",
    "user_is_created_by_system",
    "user_is_created_by_peer",
    "user_is_anonymous",
    "user_registration_timestamp",
    "user_creation_timestamp",
    "user_first_edit_timestamp",
    "revision_id",
    "revision_parent_id",
    "revision_minor_edit",
    "revision_deleted_parts",
    "revision_deleted_parts_are_suppressed",
    "revision_text_bytes",
    "revision_text_bytes_diff",
    "revision_text_sha1",
    "revision_content_model",
    "revision_content_format",
    "revision_is_deleted_by_page_deletion",
    "revision_deleted_by_page_deletion_timestamp",
    "revision_is_identity_reverted",
    "revision_first_identity_reverting_revision_id",
    "revision_seconds_to_identity_revert",
    "revision_is_identity_revert",
    "revision_is_from_before_page_creation",
    "revision_tags",
];

#[derive(Debug, thiserror::Error)]
pub enum DumpError {
    #[error("cannot read dump {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("dump schema is missing required column {0:?}")]
    MissingColumn(&'static str),
    #[error(transparent)]
    Profile(#[from] ProfileError),
}

/// Why a single line could not be parsed. Never fatal to a stream.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParseError {
    #[error("expected {expected} columns, found {found}")]
    ColumnCount { expected: usize, found: usize },
    #[error("bad timestamp {0:?}")]
    Timestamp(String),
    #[error("bad integer in column {column}: {value:?}")]
    Integer { column: &'static str, value: String },
    #[error("bad boolean in column {column}: {value:?}")]
    Boolean { column: &'static str, value: String },
    #[error("line is not valid UTF-8")]
    Encoding,
}

/// Why a well-formed line produced no event.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SkipReason {
    /// `page` or `user` entity rows.
    NotRevision,
    /// Revision rows other than creation (e.g. deletions).
    NotCreate,
    /// Outside the article namespace.
    NotArticle,
    /// Registered, non-bot actor without a user id.
    MissingUserId,
    Header,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DumpSchema {
    columns: Vec<String>,
}

impl Default for DumpSchema {
    fn default() -> Self {
        DumpSchema {
            columns: MEDIAWIKI_HISTORY_COLUMNS.iter().map(|c| c.to_string()).collect(),
        }
    }
}

impl DumpSchema {
    pub fn from_header(line: &str) -> Self {
        DumpSchema {
            columns: line.trim_end_matches(['\r', '\n']).split('\t').map(str::to_owned).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    fn index(&self, name: &'static str) -> Result<usize, DumpError> {
        self.columns
            .iter()
            .position(|c| c == name)
            .ok_or(DumpError::MissingColumn(name))
    }

    fn optional_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn resolve(&self) -> Result<ColumnMap, DumpError> {
        Ok(ColumnMap {
            width: self.columns.len(),
            event_entity: self.index("event_entity")?,
            event_type: self.index("event_type")?,
            event_timestamp: self.index("event_timestamp")?,
            event_user_id: self.index("event_user_id")?,
            bot_by: self.index("event_user_is_bot_by")?,
            bot_by_historical: self.optional_index("event_user_is_bot_by_historical"),
            is_anonymous: self.index("event_user_is_anonymous")?,
            page_id: self.index("page_id")?,
            namespace_historical: self.optional_index("page_namespace_historical"),
            namespace: self.index("page_namespace")?,
            is_identity_revert: self.index("revision_is_identity_revert")?,
            bytes_diff: self.index("revision_text_bytes_diff")?,
        })
    }
}

/// Column positions resolved from a [`DumpSchema`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ColumnMap {
    width: usize,
    event_entity: usize,
    event_type: usize,
    event_timestamp: usize,
    event_user_id: usize,
    bot_by: usize,
    bot_by_historical: Option<usize>,
    is_anonymous: usize,
    page_id: usize,
    namespace_historical: Option<usize>,
    namespace: usize,
    is_identity_revert: usize,
    bytes_diff: usize,
}

impl Default for ColumnMap {
    fn default() -> Self {
        DumpSchema::default().resolve().expect("built-in schema is complete")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawDumpRecord {
    pub event_entity: String,
    pub event_type: String,
    pub timestamp_utc: DateTime<Utc>,
    pub is_bot: bool,
    pub is_anonymous: bool,
    pub user_id: Option<u64>,
    pub page_id: u64,
    pub namespace: i64,
    pub is_identity_revert: bool,
    pub byte_delta: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum UserKind {
    Anonymous,
    Registered,
    Bot,
}

/// One article-namespace revision, localized to the edition's timezone.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RevisionEvent {
    pub language: String,
    pub timestamp: DateTime<Utc>,
    pub local_date: NaiveDate,
    pub user_kind: UserKind,
    pub user_id: Option<u64>,
    pub is_identity_revert: bool,
    pub byte_delta: i64,
    pub page_id: u64,
}

impl RevisionEvent {
    pub fn is_human(&self) -> bool {
        self.user_kind != UserKind::Bot
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParseOutcome {
    Record(RawDumpRecord),
    Skip(SkipReason),
}

/// Parses dump timestamps (`2020-03-15 23:30:00.0`) and RFC 3339 variants.
pub fn parse_timestamp(s: &str) -> Option<DateTime<Utc>> {
    const FORMATS: [&str; 2] = ["%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%dT%H:%M:%S%.f"];
    let trimmed = s.trim_end_matches('Z');
    FORMATS
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(trimmed, f).ok())
        .map(|naive| naive.and_utc())
        .or_else(|| DateTime::parse_from_rfc3339(s).ok().map(|d| d.with_timezone(&Utc)))
}

fn parse_bool(column: &'static str, v: &str) -> Result<bool, ParseError> {
    match v {
        "true" | "True" | "TRUE" | "1" => Ok(true),
        "false" | "False" | "FALSE" | "0" | "" => Ok(false),
        _ => Err(ParseError::Boolean {
            column,
            value: v.to_owned(),
        }),
    }
}

fn parse_int<T: std::str::FromStr>(column: &'static str, v: &str) -> Result<T, ParseError> {
    v.parse().map_err(|_| ParseError::Integer {
        column,
        value: v.to_owned(),
    })
}

/// Parses one TSV row against `columns`.
///
/// Only revision-creation rows yield a record; other entities are skipped.
/// The namespace is the one the page had when the event happened, falling
/// back to the current namespace when the historical field is empty.
pub fn parse_record(line: &str, columns: &ColumnMap) -> Result<ParseOutcome, ParseError> {
    let line = line.trim_end_matches(['\r', '\n']);
    // Fields are borrowed; 70 columns stay on the stack in the common case.
    let mut fields: [&str; 96] = [""; 96];
    let mut found = 0usize;
    for (i, f) in line.split('\t').enumerate() {
        if i < fields.len() {
            fields[i] = f;
        }
        found = i + 1;
    }
    if found != columns.width || found > fields.len() {
        return Err(ParseError::ColumnCount {
            expected: columns.width,
            found,
        });
    }

    if fields[columns.event_entity] != "revision" {
        return Ok(ParseOutcome::Skip(SkipReason::NotRevision));
    }
    if fields[columns.event_type] != "create" {
        return Ok(ParseOutcome::Skip(SkipReason::NotCreate));
    }

    let ts_field = fields[columns.event_timestamp];
    let timestamp_utc =
        parse_timestamp(ts_field).ok_or_else(|| ParseError::Timestamp(ts_field.to_owned()))?;

    let is_bot = !fields[columns.bot_by].is_empty()
        || columns
            .bot_by_historical
            .is_some_and(|i| !fields[i].is_empty());
    let is_anonymous = parse_bool("event_user_is_anonymous", fields[columns.is_anonymous])?;
    let user_id = match fields[columns.event_user_id] {
        "" => None,
        v => Some(parse_int("event_user_id", v)?),
    };
    let page_id = parse_int("page_id", fields[columns.page_id])?;
    let ns_field = columns
        .namespace_historical
        .map(|i| fields[i])
        .filter(|v| !v.is_empty())
        .unwrap_or(fields[columns.namespace]);
    let namespace = parse_int("page_namespace", ns_field)?;
    let is_identity_revert =
        parse_bool("revision_is_identity_revert", fields[columns.is_identity_revert])?;
    let byte_delta = match fields[columns.bytes_diff] {
        "" => 0,
        v => parse_int("revision_text_bytes_diff", v)?,
    };

    Ok(ParseOutcome::Record(RawDumpRecord {
        event_entity: fields[columns.event_entity].to_owned(),
        event_type: fields[columns.event_type].to_owned(),
        timestamp_utc,
        is_bot,
        is_anonymous,
        user_id,
        page_id,
        namespace,
        is_identity_revert,
        byte_delta,
    }))
}

/// Civil date of `ts` in `tz`, honoring DST.
pub fn localize(ts: DateTime<Utc>, tz: &Tz) -> NaiveDate {
    ts.with_timezone(tz).date_naive()
}

/// Converts a parsed record into an event, or explains why it is dropped.
pub fn normalize(
    raw: RawDumpRecord,
    language: &str,
    tz: &Tz,
) -> Result<RevisionEvent, SkipReason> {
    if raw.namespace != 0 {
        return Err(SkipReason::NotArticle);
    }
    let user_kind = if raw.is_bot {
        UserKind::Bot
    } else if raw.is_anonymous {
        UserKind::Anonymous
    } else {
        UserKind::Registered
    };
    if user_kind == UserKind::Registered && raw.user_id.is_none() {
        return Err(SkipReason::MissingUserId);
    }
    Ok(RevisionEvent {
        language: language.to_owned(),
        timestamp: raw.timestamp_utc,
        local_date: localize(raw.timestamp_utc, tz),
        user_kind,
        user_id: if user_kind == UserKind::Anonymous { None } else { raw.user_id },
        is_identity_revert: raw.is_identity_revert,
        byte_delta: raw.byte_delta,
        page_id: raw.page_id,
    })
}

/// True iff the event touches a page outside `excluded_pages`.
pub fn apply_exclusion_list(event: &RevisionEvent, excluded_pages: &HashSet<u64>) -> bool {
    !excluded_pages.contains(&event.page_id)
}

/// Reads a newline-delimited list of page ids. Blank lines and `#` comments are ignored.
pub fn load_exclusion_list(path: &Path) -> Result<HashSet<u64>, DumpError> {
    let io_err = |source| DumpError::Io {
        path: path.display().to_string(),
        source,
    };
    let reader = BufReader::new(File::open(path).map_err(io_err)?);
    let mut ids = HashSet::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err)?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let id = t.parse().map_err(|_| {
            io_err(io::Error::new(
                io::ErrorKind::InvalidData,
                format!("line {}: not a page id: {t:?}", lineno + 1),
            ))
        })?;
        ids.insert(id);
    }
    Ok(ids)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamStats {
    pub lines_read: u64,
    pub records_skipped: u64,
    pub parse_errors: u64,
}

impl StreamStats {
    /// Lines that became events.
    pub fn events(&self) -> u64 {
        self.lines_read - self.records_skipped - self.parse_errors
    }
}

impl std::ops::AddAssign for StreamStats {
    fn add_assign(&mut self, o: StreamStats) {
        self.lines_read += o.lines_read;
        self.records_skipped += o.records_skipped;
        self.parse_errors += o.parse_errors;
    }
}

/// Iterator of [`RevisionEvent`]s over one dump.
///
/// Memory use is one line buffer regardless of file size. Malformed lines are
/// counted and skipped; only I/O failures end the stream with an error.
pub struct DumpStream<R> {
    reader: R,
    buf: Vec<u8>,
    columns: ColumnMap,
    schema_checked: bool,
    language: String,
    tz: Tz,
    stats: StreamStats,
    source: String,
    failed: bool,
}

impl<R: BufRead> DumpStream<R> {
    pub fn new(reader: R, profile: &LanguageProfile) -> Result<Self, DumpError> {
        Ok(DumpStream {
            reader,
            buf: Vec::with_capacity(1024),
            columns: ColumnMap::default(),
            schema_checked: false,
            language: profile.code.clone(),
            tz: profile.tz()?,
            stats: StreamStats::default(),
            source: String::from("<reader>"),
            failed: false,
        })
    }

    pub fn stats(&self) -> StreamStats {
        self.stats
    }

    fn next_line(&mut self) -> Option<Result<(), DumpError>> {
        self.buf.clear();
        match self.reader.read_until(b'\n', &mut self.buf) {
            Ok(0) => None,
            Ok(_) => Some(Ok(())),
            Err(source) => Some(Err(DumpError::Io {
                path: self.source.clone(),
                source,
            })),
        }
    }
}

impl<R: BufRead> Iterator for DumpStream<R> {
    type Item = Result<RevisionEvent, DumpError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        loop {
            match self.next_line()? {
                Ok(()) => {}
                Err(e) => {
                    self.failed = true;
                    return Some(Err(e));
                }
            }
            self.stats.lines_read += 1;
            let Ok(line) = std::str::from_utf8(&self.buf) else {
                self.stats.parse_errors += 1;
                continue;
            };

            if !self.schema_checked {
                self.schema_checked = true;
                if line.starts_with("wiki_db\t") {
                    match DumpSchema::from_header(line).resolve() {
                        Ok(map) => self.columns = map,
                        Err(e) => {
                            self.failed = true;
                            return Some(Err(e));
                        }
                    }
                    self.stats.records_skipped += 1;
                    continue;
                }
            }

            let raw = match parse_record(line, &self.columns) {
                Ok(ParseOutcome::Record(raw)) => raw,
                Ok(ParseOutcome::Skip(_)) => {
                    self.stats.records_skipped += 1;
                    continue;
                }
                Err(_) => {
                    self.stats.parse_errors += 1;
                    continue;
                }
            };
            match normalize(raw, &self.language, &self.tz) {
                Ok(event) => return Some(Ok(event)),
                Err(_) => self.stats.records_skipped += 1,
            }
        }
    }
}

const READ_BUFFER: usize = 1 << 20;

/// Opens a plain, gzip or bzip2 dump file as an event stream.
pub fn open_dump_stream(
    path: &Path,
    profile: &LanguageProfile,
) -> Result<DumpStream<Box<dyn BufRead + Send>>, DumpError> {
    let io_err = |source| DumpError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut file = BufReader::with_capacity(READ_BUFFER, File::open(path).map_err(io_err)?);
    let magic = file.fill_buf().map_err(io_err)?;
    let reader: Box<dyn BufRead + Send> = if magic.starts_with(&[0x1f, 0x8b]) {
        Box::new(BufReader::with_capacity(
            READ_BUFFER,
            flate2::bufread::MultiGzDecoder::new(file),
        ))
    } else if magic.starts_with(b"BZh") {
        Box::new(BufReader::with_capacity(
            READ_BUFFER,
            bzip2::bufread::MultiBzDecoder::new(file),
        ))
    } else {
        Box::new(file)
    };
    let mut stream = DumpStream::new(reader, profile)?;
    stream.source = path.display().to_string();
    Ok(stream)
}

/// Reads a whole stream from any reader; convenient for tests and small inputs.
pub fn read_events<R: Read>(
    reader: R,
    profile: &LanguageProfile,
) -> Result<(Vec<RevisionEvent>, StreamStats), DumpError> {
    let mut stream = DumpStream::new(BufReader::new(reader), profile)?;
    let events = stream.by_ref().collect::<Result<Vec<_>, _>>()?;
    Ok((events, stream.stats()))
}

/// Formats a dump timestamp the way the published files do. Dump timestamps
/// have whole-second precision; sub-second parts are truncated.
pub fn format_timestamp(ts: DateTime<Utc>) -> String {
    ts.format("%Y-%m-%d %H:%M:%S.0").to_string()
}

/// Writes `event` as a 70-column dump row (no trailing newline).
///
/// Fields the reader does not use are left empty, except the descriptive ones
/// that make rows recognizable when inspected by hand.
pub fn format_dump_row(event: &RevisionEvent, wiki_db: &str) -> String {
    let mut out = String::with_capacity(256);
    let user_id = event.user_id.map(|u| u.to_string()).unwrap_or_default();
    let bot = if event.user_kind == UserKind::Bot { "group" } else { "" };
    let anon = event.user_kind == UserKind::Anonymous;
    for (i, col) in MEDIAWIKI_HISTORY_COLUMNS.iter().enumerate() {
        if i > 0 {
            out.push('\t');
        }
        match *col {
            "wiki_db" => out.push_str(wiki_db),
            "event_entity" => out.push_str("revision"),
            "event_type" => out.push_str("create"),
            "event_timestamp" => out.push_str(&format_timestamp(event.timestamp)),
            "event_user_id" => out.push_str(&user_id),
            "event_user_is_bot_by" => out.push_str(bot),
            "event_user_is_anonymous" => out.push_str(if anon { "true" } else { "false" }),
            "page_id" => {
                let _ = write!(out, "{}", event.page_id);
            }
            "page_namespace" | "page_namespace_historical" => out.push('0'),
            "revision_is_identity_revert" => {
                out.push_str(if event.is_identity_revert { "true" } else { "false" })
            }
            "revision_text_bytes_diff" => {
                let _ = write!(out, "{}", event.byte_delta);
            }
            _ => {}
        }
    }
    out
}

/// Convenience for building fixture rows: starts from an all-empty row and
/// sets the named columns.
pub fn fixture_row(values: &[(&str, &str)]) -> String {
    let mut fields = vec![""; MEDIAWIKI_HISTORY_COLUMNS.len()];
    for (name, value) in values {
        let i = MEDIAWIKI_HISTORY_COLUMNS
            .iter()
            .position(|c| c == name)
            .unwrap_or_else(|| panic!("unknown dump column {name}"));
        fields[i] = value;
    }
    fields.join("\t")
}

/// Builds a UTC instant from a date and time of day; panics on invalid input.
pub fn utc(y: i32, m: u32, d: u32, hh: u32, mm: u32, ss: u32) -> DateTime<Utc> {
    Utc.with_ymd_and_hms(y, m, d, hh, mm, ss).single().expect("valid UTC instant")
}
