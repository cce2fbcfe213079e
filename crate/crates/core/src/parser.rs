//! Lexical-level parsing of Coq `.v` proof scripts into traces.
//!
//! This is deliberately not a Coq grammar. Scripts are cut into sentences at
//! `.` followed by whitespace, proofs are delimited by the statement keyword
//! and `Qed.`/`Defined.`, and each sentence is split on top-level `;` into
//! proof steps.

use std::path::{Path, PathBuf};

use log::{debug, warn};
use rayon::prelude::*;
use thiserror::Error;

use crate::trace::{encode_step, Corpus, Trace, TraceEvent};

#[derive(Debug, Error)]
pub enum ParseError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: unterminated comment")]
    UnterminatedComment { line: usize },
    #[error("line {line}: `*)` without matching `(*`")]
    UnmatchedCommentClose { line: usize },
    #[error("proof {name:?} has no steps")]
    NoSteps { name: String },
    #[error("proof {name:?}, step {step:?}: {reason}")]
    BadStep {
        name: String,
        step: String,
        reason: String,
    },
}

const STATEMENT_KEYWORDS: [&str; 6] = [
    "Lemma",
    "Theorem",
    "Corollary",
    "Fact",
    "Remark",
    "Proposition",
];

/// Tacticals whose whole argument is kept as one untokenized parameter.
const TACTICALS: [&str; 8] = [
    "try", "repeat", "progress", "now", "solve", "first", "abstract", "once",
];

/// Keywords that glue the remainder of a step into a single parameter.
const GLUE_KEYWORDS: [&str; 5] = ["in", "with", "as", "using", "by"];

/// One proven proposition cut out of a script.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScriptBlock {
    pub name: String,
    pub statement: String,
    pub body: String,
    /// 1-based line of the statement keyword.
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkippedProof {
    pub name: String,
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Extraction {
    pub blocks: Vec<ScriptBlock>,
    pub skipped: Vec<SkippedProof>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParseSummary {
    pub files_read: usize,
    pub proofs_parsed: usize,
    pub proofs_skipped: usize,
    pub warnings: Vec<String>,
}

/// Replaces (possibly nested) comments with spaces, keeping newlines so that
/// offsets and line numbers are unchanged.
pub fn strip_comments(text: &str) -> Result<String, ParseError> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = String::with_capacity(text.len());
    let mut depth = 0usize;
    let mut open_line = 0;
    let mut line = 1;
    let mut in_string = false;
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let next = chars.get(i + 1).copied();
        if c == '\n' {
            line += 1;
        }
        if depth == 0 && c == '"' {
            in_string = !in_string;
            out.push(c);
        } else if in_string {
            out.push(c);
        } else if c == '(' && next == Some('*') {
            if depth == 0 {
                open_line = line;
            }
            depth += 1;
            out.push_str("  ");
            i += 1;
        } else if c == '*' && next == Some(')') {
            if depth == 0 {
                return Err(ParseError::UnmatchedCommentClose { line });
            }
            depth -= 1;
            out.push_str("  ");
            i += 1;
        } else if depth > 0 {
            out.push(if c == '\n' { '\n' } else { ' ' });
        } else {
            out.push(c);
        }
        i += 1;
    }
    if depth > 0 {
        return Err(ParseError::UnterminatedComment { line: open_line });
    }
    Ok(out)
}

/// A `.`-terminated sentence as a byte range of the comment-free text.
#[derive(Debug, Clone, Copy)]
struct Sentence {
    start: usize,
    /// Offset of the terminating `.` (or end of text for a trailing fragment).
    end: usize,
    terminated: bool,
}

/// Cuts text into sentences. A `.` ends a sentence only at bracket depth 0,
/// outside strings, and when followed by whitespace or end of input.
fn sentences(text: &str) -> Vec<Sentence> {
    let mut out = Vec::new();
    let mut depth = 0usize;
    let mut in_string = false;
    let mut start = 0;
    let mut iter = text.char_indices().peekable();
    while let Some((i, c)) = iter.next() {
        match c {
            '"' => in_string = !in_string,
            _ if in_string => {}
            '(' | '[' => depth += 1,
            ')' | ']' => depth = depth.saturating_sub(1),
            '.' if depth == 0 => {
                let ends = iter.peek().is_none_or(|(_, n)| n.is_whitespace());
                if ends {
                    out.push(Sentence {
                        start,
                        end: i,
                        terminated: true,
                    });
                    start = i + 1;
                }
            }
            _ => {}
        }
    }
    if !text[start..].trim().is_empty() {
        out.push(Sentence {
            start,
            end: text.len(),
            terminated: false,
        });
    }
    out
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset].bytes().filter(|&b| b == b'\n').count() + 1
}

fn first_word(s: &str) -> &str {
    s.split(|c: char| c.is_whitespace() || c == ':' || c == '(')
        .next()
        .unwrap_or("")
}

/// Finds every proof ending in `Qed.` or `Defined.`, in source order.
pub fn extract_blocks(script: &str) -> Result<Extraction, ParseError> {
    let text = strip_comments(script)?;
    let mut result = Extraction::default();
    // (name, statement, body start offset, line)
    let mut open: Option<(String, String, usize, usize)> = None;

    for s in sentences(&text) {
        let sentence = text[s.start..s.end].trim();
        let leading = sentence.trim_start_matches(['{', '}', '-', '+', '*', ' ', '\n', '\t', '\r']);
        let keyword = first_word(leading);
        let raw = &text[s.start..s.end];
        let line = line_of(&text, s.start + raw.len() - raw.trim_start().len());

        if STATEMENT_KEYWORDS.contains(&keyword) && s.terminated {
            if let Some((name, _, _, l)) = open.take() {
                result.skipped.push(SkippedProof {
                    name,
                    line: l,
                    reason: "proof has no terminator".into(),
                });
            }
            let statement = leading[keyword.len()..].trim().to_string();
            let name = statement
                .split(|c: char| c.is_whitespace() || c == ':' || c == '(' || c == '{')
                .next()
                .unwrap_or("")
                .to_string();
            open = Some((name, statement, s.end + 1, line));
            continue;
        }

        match (open.as_ref(), keyword) {
            (Some(_), "Qed" | "Defined") if s.terminated => {
                let (name, statement, body_start, l) = open.take().unwrap();
                let body = text[body_start..s.start].to_string();
                debug!("extracted proof {name} at line {l}");
                result.blocks.push(ScriptBlock {
                    name,
                    statement,
                    body,
                    line: l,
                });
            }
            (Some(_), "Admitted" | "Abort") => {
                let (name, _, _, l) = open.take().unwrap();
                result.skipped.push(SkippedProof {
                    name,
                    line: l,
                    reason: format!("proof ends with {keyword}"),
                });
            }
            (None, "Ltac") => {
                result
                    .warnings
                    .push(format!("line {line}: skipping Ltac definition"));
            }
            _ => {}
        }
    }
    if let Some((name, _, _, l)) = open {
        result.skipped.push(SkippedProof {
            name,
            line: l,
            reason: "proof has no terminator".into(),
        });
    }
    Ok(result)
}

/// Strips bullets and focusing braces from the front of a sentence.
fn strip_structure(mut s: &str) -> &str {
    loop {
        s = s.trim_start();
        let Some(c) = s.chars().next() else {
            return s;
        };
        match c {
            '{' | '}' => s = &s[1..],
            '-' | '+' | '*' => {
                let run = s.chars().take_while(|&x| x == c).count();
                let rest = &s[run..];
                if rest.is_empty() || rest.starts_with(char::is_whitespace) {
                    s = rest;
                } else {
                    return s;
                }
            }
            _ => return s,
        }
    }
}

/// Splits on `sep` where it occurs outside brackets and strings.
fn split_top_level(s: &str, sep: char) -> Vec<&str> {
    let mut parts = Vec::new();
    let mut depth = 0usize;
    let mut in_string = false;
    let mut start = 0;
    for (i, c) in s.char_indices() {
        match c {
            '"' => in_string = !in_string,
            _ if in_string => {}
            '(' | '[' | '{' => depth += 1,
            ')' | ']' | '}' => depth = depth.saturating_sub(1),
            _ if c == sep && depth == 0 => {
                parts.push(&s[start..i]);
                start = i + c.len_utf8();
            }
            _ => {}
        }
    }
    parts.push(&s[start..]);
    parts
}

/// Whitespace-separated tokens, keeping bracketed groups and strings whole.
fn tokens(s: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut depth = 0usize;
    let mut in_string = false;
    for c in s.chars() {
        match c {
            '"' => {
                in_string = !in_string;
                cur.push(c);
            }
            _ if in_string => cur.push(c),
            '(' | '[' | '{' => {
                depth += 1;
                cur.push(c);
            }
            ')' | ']' | '}' => {
                depth = depth.saturating_sub(1);
                cur.push(c);
            }
            _ if c.is_whitespace() && depth == 0 => {
                if !cur.is_empty() {
                    out.push(std::mem::take(&mut cur));
                }
            }
            _ => cur.push(c),
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

/// Groups the argument text of a step into positional parameters.
fn group_params(method: &str, rest: &str) -> Vec<String> {
    let rest = rest.trim();
    if rest.is_empty() {
        return Vec::new();
    }
    if TACTICALS.contains(&method) {
        return vec![rest.to_string()];
    }
    let toks = tokens(rest);
    let mut params: Vec<String> = Vec::new();
    let mut i = 0;
    while i < toks.len() {
        let tok = toks[i].as_str();
        if GLUE_KEYWORDS.contains(&tok) {
            params.push(toks[i..].join(" "));
            break;
        }
        match tok {
            "<-" | "->" if i + 1 < toks.len() => {
                params.push(format!("{tok} {}", toks[i + 1]));
                i += 2;
            }
            "|-" => {
                let mut glued = params
                    .pop()
                    .map(|p| p + " |-")
                    .unwrap_or_else(|| "|-".into());
                if let Some(next) = toks.get(i + 1) {
                    glued.push(' ');
                    glued.push_str(next);
                    i += 1;
                }
                params.push(glued);
                i += 1;
            }
            _ => {
                params.push(tok.to_string());
                i += 1;
            }
        }
    }
    params
}

/// Recognizes a goal selector prefix such as `2:`, `1-3:` or `all:`.
fn strip_goal_selector(s: &str) -> Option<&str> {
    let colon = s.find(':')?;
    let head = s[..colon].trim();
    let is_selector = head == "all"
        || (!head.is_empty()
            && head
                .chars()
                .all(|c| c.is_ascii_digit() || c == '-' || c == ','));
    if is_selector && !s[colon + 1..].starts_with('=') {
        Some(s[colon + 1..].trim_start())
    } else {
        None
    }
}

fn parse_substep(name: &str, raw: &str, combined: bool) -> Result<TraceEvent, ParseError> {
    let step = raw.trim();
    let method_len = step
        .find(|c: char| c.is_whitespace() || matches!(c, '(' | '[' | '{' | '"'))
        .unwrap_or(step.len());
    let (method, rest) = step.split_at(method_len);
    let params = group_params(method, rest);
    encode_step(method, &params, combined).map_err(|e| ParseError::BadStep {
        name: name.to_string(),
        step: step.to_string(),
        reason: e.to_string(),
    })
}

/// Parses a proof body (steps separated by `.` and `;`) into events.
///
/// Returns the events and any warnings (goal selectors stripped, trailing
/// unterminated text).
pub fn parse_steps(name: &str, body: &str) -> Result<(Vec<TraceEvent>, Vec<String>), ParseError> {
    let mut events = Vec::new();
    let mut warnings = Vec::new();
    for s in sentences(body) {
        let mut sentence = strip_structure(&body[s.start..s.end]).trim();
        if sentence.is_empty() {
            continue;
        }
        let first = first_word(sentence);
        if first == "Proof" || first == "Qed" || first == "Defined" {
            continue;
        }
        if let Some(rest) = strip_goal_selector(sentence) {
            warnings.push(format!("{name}: goal selector dropped from `{sentence}`"));
            sentence = rest;
        }
        if !s.terminated {
            warnings.push(format!("{name}: unterminated step `{sentence}`"));
        }
        let parts: Vec<&str> = split_top_level(sentence, ';')
            .into_iter()
            .filter(|p| !p.trim().is_empty())
            .collect();
        let last = parts.len().saturating_sub(1);
        for (i, part) in parts.iter().enumerate() {
            events.push(parse_substep(name, part, i < last)?);
        }
    }
    Ok((events, warnings))
}

/// Converts one proof block into a positive trace named after the proposition.
pub fn block_to_trace(block: &ScriptBlock) -> Result<Trace, ParseError> {
    block_to_trace_with_warnings(block).map(|(t, _)| t)
}

pub fn block_to_trace_with_warnings(
    block: &ScriptBlock,
) -> Result<(Trace, Vec<String>), ParseError> {
    let (events, warnings) = parse_steps(&block.name, &block.body)?;
    if events.is_empty() {
        return Err(ParseError::NoSteps {
            name: block.name.clone(),
        });
    }
    Ok((Trace::positive(block.name.clone(), events), warnings))
}

/// Parses script text into traces, skipping blocks that fail to parse.
pub fn parse_script(script: &str) -> Result<(Vec<Trace>, ParseSummary), ParseError> {
    let extraction = extract_blocks(script)?;
    let mut summary = ParseSummary {
        proofs_skipped: extraction.skipped.len(),
        warnings: extraction.warnings,
        ..ParseSummary::default()
    };
    for s in &extraction.skipped {
        summary
            .warnings
            .push(format!("line {}: skipped {}: {}", s.line, s.name, s.reason));
    }
    let mut traces = Vec::new();
    for block in &extraction.blocks {
        match block_to_trace_with_warnings(block) {
            Ok((trace, w)) => {
                summary.warnings.extend(w);
                traces.push(trace);
            }
            Err(e) => {
                summary.proofs_skipped += 1;
                summary
                    .warnings
                    .push(format!("line {}: skipped: {e}", block.line));
            }
        }
    }
    summary.proofs_parsed = traces.len();
    Ok((traces, summary))
}

/// Reads and parses every file; traces are concatenated in path order.
pub fn parse_corpus<P: AsRef<Path> + Sync>(
    paths: &[P],
) -> Result<(Corpus, ParseSummary), ParseError> {
    let per_file: Vec<Result<(Vec<Trace>, ParseSummary), ParseError>> = paths
        .par_iter()
        .map(|p| {
            let path = p.as_ref();
            let text = std::fs::read_to_string(path).map_err(|source| ParseError::Io {
                path: path.to_path_buf(),
                source,
            })?;
            let (traces, mut summary) = parse_script(&text)?;
            for w in &mut summary.warnings {
                *w = format!("{}: {w}", path.display());
            }
            Ok((traces, summary))
        })
        .collect();

    let mut traces = Vec::new();
    let mut summary = ParseSummary::default();
    for result in per_file {
        let (t, s) = result?;
        traces.extend(t);
        summary.files_read += 1;
        summary.proofs_parsed += s.proofs_parsed;
        summary.proofs_skipped += s.proofs_skipped;
        summary.warnings.extend(s.warnings);
    }
    for w in &summary.warnings {
        warn!("{w}");
    }
    let source = paths
        .iter()
        .map(|p| p.as_ref().display().to_string())
        .collect::<Vec<_>>()
        .join(", ");
    Ok((Corpus::new(traces, source), summary))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(events: &[TraceEvent]) -> Vec<&str> {
        events.iter().map(|e| e.label.as_str()).collect()
    }

    #[test]
    fn empty_file_has_no_blocks() {
        assert_eq!(extract_blocks("").unwrap(), Extraction::default());
    }

    #[test]
    fn admitted_proofs_are_skipped() {
        let src =
            "Lemma a : True.\nProof. admit. Admitted.\n\nLemma b : True.\nProof. trivial. Qed.\n";
        let ex = extract_blocks(src).unwrap();
        assert_eq!(ex.blocks.len(), 1);
        assert_eq!(ex.blocks[0].name, "b");
        assert_eq!(ex.skipped.len(), 1);
        assert_eq!(ex.skipped[0].name, "a");
        assert_eq!(ex.skipped[0].line, 1);
    }

    #[test]
    fn unterminated_proof_is_not_fatal() {
        let src = "Theorem t : True.\nProof. trivial.\nLemma u : True. auto. Qed.";
        let ex = extract_blocks(src).unwrap();
        assert_eq!(ex.blocks.len(), 1);
        assert_eq!(ex.skipped[0].name, "t");
    }

    #[test]
    fn unbalanced_comments_report_line() {
        match extract_blocks("Lemma a : True.\n(* open (* nested *)\ntrivial. Qed.") {
            Err(ParseError::UnterminatedComment { line }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            extract_blocks("x.\n\n *) y."),
            Err(ParseError::UnmatchedCommentClose { line: 3 })
        ));
    }

    #[test]
    fn nested_comment_inside_proof() {
        let src =
            "Lemma c : True.\nProof.\n  (* a (* b. c; *) d. *)\n  intros. (* ; *) auto.\nQed.";
        let (traces, _) = parse_script(src).unwrap();
        assert_eq!(labels(&traces[0].events), ["intros_0", "auto_0"]);
    }

    #[test]
    fn single_trivial_step() {
        let (events, _) = parse_steps("t", "trivial.").unwrap();
        assert_eq!(labels(&events), ["trivial_0"]);
        assert!(!events[0].values.combined);
    }

    #[test]
    fn semicolons_mark_combination() {
        let (events, _) =
            parse_steps("t", "destruct b1; destruct b2; simpl in |- *; trivial.").unwrap();
        assert_eq!(
            labels(&events),
            ["destruct", "destruct", "simpl", "trivial_0"]
        );
        let combined: Vec<bool> = events.iter().map(|e| e.values.combined).collect();
        assert_eq!(combined, [true, true, true, false]);
        assert_eq!(events[2].values.params, ["in |- *"]);
    }

    #[test]
    fn brackets_and_qualified_names_do_not_split() {
        let (events, _) = parse_steps(
            "t",
            "apply List.app_nil_r. assert (x = 1. 5; y). exact [a. b].",
        )
        .unwrap();
        assert_eq!(labels(&events), ["apply", "assert", "exact"]);
        assert_eq!(events[0].values.params, ["List.app_nil_r"]);
        assert_eq!(events[1].values.params, ["(x = 1. 5; y)"]);
        assert!(!events[1].values.combined);
    }

    #[test]
    fn method_less_branch_is_rejected() {
        assert!(matches!(
            parse_steps("t", "induction n; [ simpl | trivial ]."),
            Err(ParseError::BadStep { .. })
        ));
    }

    #[test]
    fn keyword_glue_and_arrows() {
        let (events, _) = parse_steps(
            "t",
            "rewrite <- H in H0. auto with arith. apply H with (x := 3). destruct n as [|n'].",
        )
        .unwrap();
        assert_eq!(events[0].values.params, ["<- H", "in H0"]);
        assert_eq!(events[1].values.params, ["with arith"]);
        assert_eq!(events[2].values.params, ["H", "with (x := 3)"]);
        assert_eq!(events[3].values.params, ["n", "as [|n']"]);
    }

    #[test]
    fn tacticals_keep_inner_tactic_whole() {
        let (events, _) =
            parse_steps("t", "try omega. repeat rewrite H in *. try (simpl; auto).").unwrap();
        assert_eq!(events[0].values.params, ["omega"]);
        assert_eq!(events[1].values.params, ["rewrite H in *"]);
        assert_eq!(events[2].values.params, ["(simpl; auto)"]);
    }

    #[test]
    fn bullets_braces_and_selectors() {
        let (events, warnings) = parse_steps(
            "t",
            "Proof. split.\n - auto.\n - { simpl. }\n 2: trivial. all: eauto.",
        )
        .unwrap();
        assert_eq!(
            labels(&events),
            ["split_0", "auto_0", "simpl_0", "trivial_0", "eauto_0"]
        );
        assert_eq!(warnings.len(), 2);
    }

    #[test]
    fn empty_body_is_an_error() {
        let block = ScriptBlock {
            name: "e".into(),
            statement: "e : True".into(),
            body: " Proof. ".into(),
            line: 1,
        };
        assert!(matches!(
            block_to_trace(&block),
            Err(ParseError::NoSteps { .. })
        ));
    }
}
