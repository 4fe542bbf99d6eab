//! Rule matchers over lexed SQL statements and shell commands.

use super::lexer::{shell_commands, sql_statements, ShellWord, SqlStatement, SqlToken};

/// One rule hit inside a piece of text. `start..end` covers the whole
/// statement including its terminator, which is what sanitization removes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawMatch {
    pub rule: &'static str,
    pub start: usize,
    pub end: usize,
    pub matched: String,
}

pub const TEXT_RULES: [&str; 7] = [
    "sql.drop",
    "sql.truncate",
    "sql.delete_unbounded",
    "sql.alter_drop_column",
    "shell.rm_recursive",
    "shell.format_device",
    "shell.raw_device_write",
];

pub fn match_text(text: &str) -> Vec<RawMatch> {
    let mut out = match_sql(text);
    out.extend(match_shell(text, 0));
    // Text that ends inside a quote is typically a fragment meant to be
    // spliced into a quoted context, so the quoted tail is scanned as code.
    if let Some(offset) = open_quote_tail(text) {
        for m in match_text(&text[offset..]) {
            let shifted = RawMatch {
                start: m.start + offset,
                end: m.end + offset,
                ..m
            };
            if !out.iter().any(|o| o.rule == shifted.rule && o.start == shifted.start) {
                out.push(shifted);
            }
        }
    }
    out
}

/// Byte offset just after the opening quote if `text` ends inside a
/// single- or double-quoted run.
fn open_quote_tail(text: &str) -> Option<usize> {
    let mut open: Option<(char, usize)> = None;
    let mut chars = text.char_indices();
    while let Some((i, c)) = chars.next() {
        match (open, c) {
            (None, '\\') => {
                chars.next();
            }
            (None, '\'' | '"') => open = Some((c, i + 1)),
            (Some(('"', _)), '\\') => {
                chars.next();
            }
            (Some((q, _)), c) if c == q => open = None,
            _ => {}
        }
    }
    open.map(|(_, at)| at)
}

fn match_sql(text: &str) -> Vec<RawMatch> {
    let mut out = Vec::new();
    for stmt in sql_statements(text) {
        let hit = |rule| RawMatch {
            rule,
            start: stmt.start,
            end: stmt.end_with_terminator,
            matched: text[stmt.start..stmt.end].to_string(),
        };
        let first = stmt.first_word();
        if first == Some("ALTER") {
            if stmt.words().any(|(_, w)| w == "DROP") {
                out.push(hit("sql.alter_drop_column"));
            }
            continue;
        }
        if drops_object(&stmt) {
            out.push(hit("sql.drop"));
        }
        let truncates = first == Some("TRUNCATE")
            || stmt.words().any(|(i, w)| w == "TRUNCATE" && stmt.word_at(i + 1) == Some("TABLE"));
        if truncates {
            out.push(hit("sql.truncate"));
        }
        if deletes_unbounded(&stmt) {
            out.push(hit("sql.delete_unbounded"));
        }
    }
    out
}

fn drops_object(stmt: &SqlStatement) -> bool {
    stmt.words().any(|(i, w)| {
        w == "DROP"
            && (1..=2).any(|k| {
                matches!(
                    stmt.word_at(i + k),
                    Some("TABLE" | "DATABASE" | "SCHEMA")
                )
            })
    })
}

fn deletes_unbounded(stmt: &SqlStatement) -> bool {
    let Some(del) = stmt
        .words()
        .find(|(i, w)| *w == "DELETE" && stmt.word_at(i + 1).is_some())
        .map(|(i, _)| i)
    else {
        return false;
    };
    let after = &stmt.tokens[del + 1..];
    let Some(where_at) = after.iter().position(|t| matches!(t, SqlToken::Word(w) if w == "WHERE")) else {
        return true;
    };
    let clause: Vec<&SqlToken> = after[where_at + 1..]
        .iter()
        .take_while(|t| !matches!(t, SqlToken::Word(w) if matches!(w.as_str(), "ORDER" | "LIMIT" | "RETURNING")))
        .filter(|t| !matches!(t, SqlToken::Symbol('(' | ')')))
        .collect();
    clause
        .split(|t| matches!(t, SqlToken::Word(w) if w == "OR"))
        .any(is_tautology)
}

fn is_tautology(disjunct: &[&SqlToken]) -> bool {
    match disjunct {
        [SqlToken::Word(w)] => w == "TRUE",
        [SqlToken::Number(n)] => n.parse::<f64>().is_ok_and(|v| v != 0.0),
        [a, SqlToken::Symbol('='), b] => a == b,
        [a, SqlToken::Symbol('<'), SqlToken::Symbol('='), b] | [a, SqlToken::Symbol('>'), SqlToken::Symbol('='), b] => a == b,
        _ => false,
    }
}

const SHELLS: [&str; 5] = ["sh", "bash", "zsh", "dash", "ksh"];
const HARMLESS_DEVICES: [&str; 6] = ["/dev/null", "/dev/zero", "/dev/stdout", "/dev/stderr", "/dev/tty", "/dev/random"];

fn is_block_device(path: &str) -> bool {
    path.starts_with("/dev/") && !HARMLESS_DEVICES.contains(&path) && !path.starts_with("/dev/fd/")
}

fn match_shell(text: &str, depth: usize) -> Vec<RawMatch> {
    let mut out = Vec::new();
    for cmd in shell_commands(text) {
        let hit = |rule| RawMatch {
            rule,
            start: cmd.start,
            end: cmd.end,
            matched: text[cmd.start..cmd.end].to_string(),
        };
        for w in &cmd.words {
            if let ShellWord::RedirectTo(target) = w {
                if is_block_device(target) {
                    out.push(hit("shell.raw_device_write"));
                }
            }
        }
        let Some((at, program)) = cmd.program() else {
            continue;
        };
        let args = cmd.args_after(at);
        let plain_args = || {
            args.iter()
                .filter(|a| !matches!(a, ShellWord::RedirectTo(_)))
                .map(ShellWord::text)
        };
        match program.as_str() {
            "rm" => {
                let flagged = plain_args()
                    .take_while(|a| *a != "--")
                    .any(|a| match a.strip_prefix("--") {
                        Some(long) => long == "recursive" || long == "force",
                        None => a.starts_with('-') && a[1..].chars().any(|c| matches!(c, 'r' | 'R' | 'f')),
                    });
                if flagged {
                    out.push(hit("shell.rm_recursive"));
                }
            }
            "find" => {
                if plain_args().any(|a| a == "-delete") {
                    out.push(hit("shell.rm_recursive"));
                }
            }
            "mke2fs" | "wipefs" => out.push(hit("shell.format_device")),
            p if p == "mkfs" || p.starts_with("mkfs.") => out.push(hit("shell.format_device")),
            "dd" => {
                if plain_args().any(|a| a.strip_prefix("of=").is_some_and(is_block_device)) {
                    out.push(hit("shell.raw_device_write"));
                }
            }
            p if SHELLS.contains(&p) && depth < 4 => {
                let mut it = plain_args();
                while let Some(a) = it.next() {
                    if a.starts_with('-') && a.contains('c') {
                        if let Some(script) = it.next() {
                            for inner in match_shell(script, depth + 1) {
                                out.push(hit(inner.rule));
                            }
                        }
                        break;
                    }
                }
            }
            _ => {}
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rules(text: &str) -> Vec<&'static str> {
        match_text(text).into_iter().map(|m| m.rule).collect()
    }

    #[test]
    fn sql_rules_positive_and_negative() {
        assert_eq!(rules("DROP TABLE users"), ["sql.drop"]);
        assert_eq!(rules("drop database prod;"), ["sql.drop"]);
        assert_eq!(rules("DROP TEMPORARY TABLE t"), ["sql.drop"]);
        assert!(rules("SELECT drop_table FROM t").is_empty());
        assert!(rules("SELECT 'DROP TABLE users' AS note").is_empty());

        assert_eq!(rules("TRUNCATE orders"), ["sql.truncate"]);
        assert_eq!(rules("select 1; truncate table x"), ["sql.truncate"]);
        assert!(rules("SELECT truncate_len FROM t").is_empty());

        assert_eq!(rules("DELETE FROM t"), ["sql.delete_unbounded"]);
        assert_eq!(rules("DELETE FROM t WHERE 1=1"), ["sql.delete_unbounded"]);
        assert_eq!(rules("delete from t where (id = 3 or true)"), ["sql.delete_unbounded"]);
        assert_eq!(rules("DELETE FROM t WHERE 'a' = 'a'"), ["sql.delete_unbounded"]);
        assert!(rules("DELETE FROM t WHERE id = 3").is_empty());
        assert!(rules("DELETE FROM t WHERE 'a' = 'b'").is_empty());

        assert_eq!(rules("ALTER TABLE t DROP COLUMN c"), ["sql.alter_drop_column"]);
        assert!(rules("ALTER TABLE t ADD COLUMN c INT").is_empty());
    }

    #[test]
    fn shell_rules_positive_and_negative() {
        assert_eq!(rules("rm -rf /data"), ["shell.rm_recursive"]);
        assert_eq!(rules("sudo rm --recursive build"), ["shell.rm_recursive"]);
        assert_eq!(rules("cd /tmp && /bin/rm -f x"), ["shell.rm_recursive"]);
        assert_eq!(rules("find / -name x -delete"), ["shell.rm_recursive"]);
        assert_eq!(rules("bash -c 'rm -rf ~'"), ["shell.rm_recursive"]);
        assert!(rules("rm old.csv").is_empty());
        assert!(rules("echo 'rm -rf /'").is_empty());
        assert!(rules("ls -la # rm -rf /").is_empty());
        assert!(rules("rm -- -rf").is_empty());

        assert_eq!(rules("mkfs.ext4 /dev/sdb1"), ["shell.format_device"]);
        assert_eq!(rules("wipefs -a /dev/sda"), ["shell.format_device"]);
        assert!(rules("echo mkfs").is_empty());

        assert_eq!(rules("dd if=/dev/zero of=/dev/sda bs=1M"), ["shell.raw_device_write"]);
        assert_eq!(rules("cat image > /dev/nvme0n1"), ["shell.raw_device_write"]);
        assert!(rules("dd if=in.img of=out.img").is_empty());
        assert!(rules("echo hi > /dev/null").is_empty());
    }

    #[test]
    fn unterminated_quote_tail_is_scanned() {
        assert_eq!(rules("x'; DROP TABLE t; --"), ["sql.drop"]);
        assert_eq!(rules("\"; rm -rf / #"), ["shell.rm_recursive"]);
        assert!(rules("it's fine").is_empty());
    }

    #[test]
    fn spans_cover_statement_and_terminator() {
        let text = "SELECT 1; ALTER TABLE t DROP COLUMN c; SELECT 2";
        let m = &match_text(text)[0];
        assert_eq!(&text[m.start..m.end], "ALTER TABLE t DROP COLUMN c;");
    }
}
