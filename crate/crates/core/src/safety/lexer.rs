//! Statement-aware tokenizers. String literals and comments never produce
//! keyword tokens, so quoted text cannot trigger a rule.

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SqlToken {
    /// Bare word, upper-cased.
    Word(String),
    Number(String),
    /// Literal body with quotes removed, escapes left as written.
    StringLit(String),
    QuotedIdent(String),
    Symbol(char),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SqlStatement {
    pub tokens: Vec<SqlToken>,
    /// Byte range of the statement text, excluding the terminating `;`.
    pub start: usize,
    pub end: usize,
    /// End of the statement including its `;`, if present.
    pub end_with_terminator: usize,
}

impl SqlStatement {
    pub fn words(&self) -> impl Iterator<Item = (usize, &str)> {
        self.tokens.iter().enumerate().filter_map(|(i, t)| match t {
            SqlToken::Word(w) => Some((i, w.as_str())),
            _ => None,
        })
    }

    pub fn first_word(&self) -> Option<&str> {
        match self.tokens.first() {
            Some(SqlToken::Word(w)) => Some(w),
            _ => None,
        }
    }

    pub fn word_at(&self, i: usize) -> Option<&str> {
        match self.tokens.get(i) {
            Some(SqlToken::Word(w)) => Some(w),
            _ => None,
        }
    }
}

/// Splits `text` into statements at `;` outside literals and comments.
pub fn sql_statements(text: &str) -> Vec<SqlStatement> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut tokens = Vec::new();
    let mut start = 0;
    let mut first_token: Option<usize> = None;
    let mut last_end = 0;
    let mut i = 0;
    let push = |tokens: &mut Vec<SqlToken>, first: &mut Option<usize>, last: usize, term: usize, start: usize, out: &mut Vec<SqlStatement>| {
        if !tokens.is_empty() {
            out.push(SqlStatement {
                tokens: std::mem::take(tokens),
                start: first.unwrap_or(start),
                end: last,
                end_with_terminator: term,
            });
        }
        *first = None;
    };
    while i < bytes.len() {
        let c = bytes[i];
        let tok_start = i;
        match c {
            b';' => {
                push(&mut tokens, &mut first_token, last_end, i + 1, start, &mut out);
                i += 1;
                start = i;
                continue;
            }
            b'-' if bytes.get(i + 1) == Some(&b'-') => {
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
                continue;
            }
            b'#' => {
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
                continue;
            }
            b'/' if bytes.get(i + 1) == Some(&b'*') => {
                i += 2;
                while i < bytes.len() && !(bytes[i] == b'*' && bytes.get(i + 1) == Some(&b'/')) {
                    i += 1;
                }
                i = (i + 2).min(bytes.len());
                continue;
            }
            b'\'' => {
                let end = skip_quoted(bytes, i, b'\'');
                let inner_end = if end > i + 1 && bytes[end - 1] == b'\'' { end - 1 } else { end };
                tokens.push(SqlToken::StringLit(text[i + 1..inner_end].to_string()));
                i = end;
            }
            b'"' | b'`' => {
                let end = skip_quoted(bytes, i, c);
                let inner_end = if end > i + 1 && bytes[end - 1] == c { end - 1 } else { end };
                tokens.push(SqlToken::QuotedIdent(text[i + 1..inner_end].to_string()));
                i = end;
            }
            b'$' if bytes.get(i + 1) == Some(&b'$') => {
                // $$ ... $$ body
                let (inner_end, close) = match text[i + 2..].find("$$") {
                    Some(p) => (i + 2 + p, i + 2 + p + 2),
                    None => (bytes.len(), bytes.len()),
                };
                tokens.push(SqlToken::StringLit(text[i + 2..inner_end].to_string()));
                i = close;
            }
            c if c.is_ascii_whitespace() => {
                i += 1;
                continue;
            }
            c if c.is_ascii_digit() => {
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'.') {
                    i += 1;
                }
                tokens.push(SqlToken::Number(text[tok_start..i].to_string()));
            }
            c if c.is_ascii_alphabetic() || c == b'_' || c >= 0x80 => {
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_' || bytes[i] >= 0x80) {
                    i += 1;
                }
                tokens.push(SqlToken::Word(text[tok_start..i].to_ascii_uppercase()));
            }
            other => {
                tokens.push(SqlToken::Symbol(other as char));
                i += 1;
            }
        }
        if first_token.is_none() {
            first_token = Some(tok_start);
        }
        last_end = i;
    }
    push(&mut tokens, &mut first_token, last_end, bytes.len(), start, &mut out);
    out
}

/// Index just past the closing quote; doubled quotes and backslash escapes
/// stay inside the literal. Unterminated literals run to the end.
fn skip_quoted(bytes: &[u8], open: usize, quote: u8) -> usize {
    let mut i = open + 1;
    while i < bytes.len() {
        if bytes[i] == b'\\' && quote != b'`' {
            i += 2;
            continue;
        }
        if bytes[i] == quote {
            if bytes.get(i + 1) == Some(&quote) {
                i += 2;
                continue;
            }
            return i + 1;
        }
        i += 1;
    }
    bytes.len()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ShellWord {
    /// Unquoted word, verbatim.
    Bare(String),
    /// Word containing quoted parts, with quotes removed.
    Quoted(String),
    /// Output redirection target (`>`, `>>`).
    RedirectTo(String),
}

impl ShellWord {
    pub fn text(&self) -> &str {
        match self {
            ShellWord::Bare(s) | ShellWord::Quoted(s) | ShellWord::RedirectTo(s) => s,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShellCommand {
    pub words: Vec<ShellWord>,
    pub start: usize,
    pub end: usize,
}

const PREFIX_COMMANDS: [&str; 9] = ["sudo", "env", "nohup", "exec", "xargs", "command", "time", "nice", "doas"];

impl ShellCommand {
    /// The command name after wrappers (`sudo`, `env`, ...) and variable
    /// assignments, with any directory prefix removed.
    pub fn program(&self) -> Option<(usize, String)> {
        for (i, w) in self.words.iter().enumerate() {
            let ShellWord::Bare(text) = w else {
                return None;
            };
            if text.contains('=') && !text.starts_with('-') {
                continue;
            }
            if text.starts_with('-') && i > 0 {
                // option of a wrapper such as `sudo -u x`
                continue;
            }
            let name = text.rsplit('/').next().unwrap_or(text);
            if PREFIX_COMMANDS.contains(&name) {
                continue;
            }
            return Some((i, name.to_string()));
        }
        None
    }

    pub fn args_after(&self, index: usize) -> &[ShellWord] {
        &self.words[(index + 1).min(self.words.len())..]
    }
}

/// Splits shell text into simple commands at `;`, `&&`, `||`, `|`, `&` and
/// newlines. `#` comments and quotes are handled.
pub fn shell_commands(text: &str) -> Vec<ShellCommand> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut out = Vec::new();
    let mut words: Vec<ShellWord> = Vec::new();
    let mut cmd_start: Option<usize> = None;
    let mut cmd_end = 0;
    let mut redirect_next = false;
    let mut i = 0;

    let flush = |words: &mut Vec<ShellWord>, start: &mut Option<usize>, end: usize, out: &mut Vec<ShellCommand>| {
        if !words.is_empty() {
            out.push(ShellCommand {
                words: std::mem::take(words),
                start: start.unwrap_or(0),
                end,
            });
        }
        *start = None;
    };

    while i < chars.len() {
        let (pos, c) = chars[i];
        match c {
            '\n' | ';' | '|' | '&' | '(' | ')' | '`' => {
                flush(&mut words, &mut cmd_start, cmd_end, &mut out);
                redirect_next = false;
                i += 1;
            }
            '$' if chars.get(i + 1).map(|x| x.1) == Some('(') => {
                flush(&mut words, &mut cmd_start, cmd_end, &mut out);
                i += 2;
            }
            '#' => {
                while i < chars.len() && chars[i].1 != '\n' {
                    i += 1;
                }
            }
            '>' => {
                redirect_next = true;
                while i < chars.len() && chars[i].1 == '>' {
                    i += 1;
                }
                if i < chars.len() && chars[i].1 == '&' {
                    i += 1;
                }
            }
            '<' => i += 1,
            c if c.is_whitespace() => i += 1,
            _ => {
                let mut word = String::new();
                let mut quoted = false;
                while i < chars.len() {
                    let (_, c) = chars[i];
                    match c {
                        '\'' => {
                            quoted = true;
                            i += 1;
                            while i < chars.len() && chars[i].1 != '\'' {
                                word.push(chars[i].1);
                                i += 1;
                            }
                            i += 1;
                        }
                        '"' => {
                            quoted = true;
                            i += 1;
                            while i < chars.len() && chars[i].1 != '"' {
                                if chars[i].1 == '\\' && i + 1 < chars.len() {
                                    i += 1;
                                }
                                word.push(chars[i].1);
                                i += 1;
                            }
                            i += 1;
                        }
                        '\\' if i + 1 < chars.len() => {
                            word.push(chars[i + 1].1);
                            i += 2;
                        }
                        c if c.is_whitespace() || "\n;|&()`<>".contains(c) => break,
                        '$' if chars.get(i + 1).map(|x| x.1) == Some('(') => break,
                        c => {
                            word.push(c);
                            i += 1;
                        }
                    }
                }
                if cmd_start.is_none() {
                    cmd_start = Some(pos);
                }
                cmd_end = chars.get(i).map_or(text.len(), |x| x.0);
                let w = if redirect_next {
                    redirect_next = false;
                    ShellWord::RedirectTo(word)
                } else if quoted {
                    ShellWord::Quoted(word)
                } else {
                    ShellWord::Bare(word)
                };
                words.push(w);
            }
        }
    }
    flush(&mut words, &mut cmd_start, cmd_end, &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn literals_and_comments_hide_keywords() {
        let stmts = sql_statements("SELECT 'DROP TABLE x' -- DROP TABLE y\n/* DROP TABLE z */ FROM t");
        assert_eq!(stmts.len(), 1);
        let words: Vec<&str> = stmts[0].words().map(|(_, w)| w).collect();
        assert_eq!(words, ["SELECT", "FROM", "T"]);
    }

    #[test]
    fn splits_statements_with_spans() {
        let text = "ALTER TABLE t DROP COLUMN c; SELECT 1";
        let stmts = sql_statements(text);
        assert_eq!(stmts.len(), 2);
        assert_eq!(&text[stmts[0].start..stmts[0].end], "ALTER TABLE t DROP COLUMN c");
        assert_eq!(&text[stmts[0].start..stmts[0].end_with_terminator], "ALTER TABLE t DROP COLUMN c;");
        assert_eq!(&text[stmts[1].start..stmts[1].end], "SELECT 1");
    }

    #[test]
    fn semicolon_inside_literal_does_not_split() {
        assert_eq!(sql_statements("SELECT 'a;b'; SELECT 'it''s'").len(), 2);
    }

    #[test]
    fn shell_program_skips_wrappers() {
        let cmds = shell_commands("FOO=1 sudo -n /bin/rm -rf /data && echo 'rm -rf /' # rm -rf ~");
        assert_eq!(cmds.len(), 2);
        let (i, prog) = cmds[0].program().unwrap();
        assert_eq!(prog, "rm");
        assert_eq!(cmds[0].args_after(i)[0], ShellWord::Bare("-rf".into()));
        assert_eq!(cmds[1].program().unwrap().1, "echo");
        assert_eq!(cmds[1].words[1], ShellWord::Quoted("rm -rf /".into()));
    }

    #[test]
    fn redirect_targets() {
        let cmds = shell_commands("cat img > /dev/sda");
        assert_eq!(cmds[0].words.last(), Some(&ShellWord::RedirectTo("/dev/sda".into())));
    }
}
