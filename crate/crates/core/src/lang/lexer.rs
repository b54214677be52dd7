#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Tok {
    Ident(String),
    /// `$`-prefixed name; only legal in generated code.
    Reserved(String),
    /// Unsigned magnitude; the parser folds a leading `-`.
    Int(u64),
    Str(String),
    Kw(Kw),
    Assign,
    Semi,
    Comma,
    LParen,
    RParen,
    LBrace,
    RBrace,
    Plus,
    Minus,
    Star,
    Slash,
    Eq,
    Ne,
    Lt,
    Le,
    Eof,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kw {
    Var,
    Def,
    If,
    Else,
    While,
    Try,
    Catch,
    Break,
    Continue,
    Return,
    Throw,
    Assert,
    Skip,
    True,
    False,
    And,
    Or,
    Not,
    Nondet,
}

impl Kw {
    fn from_word(w: &str) -> Option<Kw> {
        Some(match w {
            "var" => Kw::Var,
            "def" => Kw::Def,
            "if" => Kw::If,
            "else" => Kw::Else,
            "while" => Kw::While,
            "try" => Kw::Try,
            "catch" => Kw::Catch,
            "break" => Kw::Break,
            "continue" => Kw::Continue,
            "return" => Kw::Return,
            "throw" => Kw::Throw,
            "assert" => Kw::Assert,
            "skip" => Kw::Skip,
            "true" => Kw::True,
            "false" => Kw::False,
            "and" => Kw::And,
            "or" => Kw::Or,
            "not" => Kw::Not,
            "nondet" => Kw::Nondet,
            _ => return None,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Token {
    pub tok: Tok,
    pub line: u32,
    pub col: u32,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LexError {
    pub line: u32,
    pub col: u32,
    pub message: String,
}

pub fn is_keyword(word: &str) -> bool {
    Kw::from_word(word).is_some()
}

pub fn tokenize(src: &str) -> Result<Vec<Token>, LexError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1u32, 1u32);

    macro_rules! bump {
        () => {{
            if chars[i] == '\n' {
                line += 1;
                col = 1;
            } else {
                col += 1;
            }
            i += 1;
        }};
    }

    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            bump!();
            continue;
        }
        if c == '/' && chars.get(i + 1) == Some(&'/') {
            while i < chars.len() && chars[i] != '\n' {
                bump!();
            }
            continue;
        }
        let (tl, tc) = (line, col);
        let err = |message: String| LexError { line: tl, col: tc, message };
        let tok = if c.is_ascii_alphabetic() || c == '_' || c == '$' {
            let start = i;
            bump!();
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                bump!();
            }
            let word: String = chars[start..i].iter().collect();
            if c == '$' {
                if word.len() == 1 {
                    return Err(err("`$` must be followed by an identifier".into()));
                }
                Tok::Reserved(word)
            } else if let Some(kw) = Kw::from_word(&word) {
                Tok::Kw(kw)
            } else {
                Tok::Ident(word)
            }
        } else if c.is_ascii_digit() {
            let start = i;
            while i < chars.len() && chars[i].is_ascii_digit() {
                bump!();
            }
            let digits: String = chars[start..i].iter().collect();
            let v = digits.parse::<u64>().map_err(|_| err(format!("integer literal `{digits}` is too large")))?;
            Tok::Int(v)
        } else if c == '"' {
            bump!();
            let mut s = String::new();
            loop {
                match chars.get(i) {
                    None => return Err(err("unterminated string literal".into())),
                    Some('"') => {
                        bump!();
                        break;
                    }
                    Some('\\') => {
                        bump!();
                        let esc = match chars.get(i) {
                            Some('n') => '\n',
                            Some('t') => '\t',
                            Some('"') => '"',
                            Some('\\') => '\\',
                            _ => return Err(err("invalid escape in string literal".into())),
                        };
                        s.push(esc);
                        bump!();
                    }
                    Some(&ch) => {
                        s.push(ch);
                        bump!();
                    }
                }
            }
            Tok::Str(s)
        } else {
            let next = chars.get(i + 1).copied();
            let (tok, width) = match (c, next) {
                (':', Some('=')) => (Tok::Assign, 2),
                ('!', Some('=')) => (Tok::Ne, 2),
                ('<', Some('=')) => (Tok::Le, 2),
                ('<', _) => (Tok::Lt, 1),
                ('=', _) => (Tok::Eq, 1),
                (';', _) => (Tok::Semi, 1),
                (',', _) => (Tok::Comma, 1),
                ('(', _) => (Tok::LParen, 1),
                (')', _) => (Tok::RParen, 1),
                ('{', _) => (Tok::LBrace, 1),
                ('}', _) => (Tok::RBrace, 1),
                ('+', _) => (Tok::Plus, 1),
                ('-', _) => (Tok::Minus, 1),
                ('*', _) => (Tok::Star, 1),
                ('/', _) => (Tok::Slash, 1),
                _ => return Err(err(format!("unexpected character `{c}`"))),
            };
            for _ in 0..width {
                bump!();
            }
            tok
        };
        out.push(Token { tok, line: tl, col: tc });
    }
    out.push(Token { tok: Tok::Eof, line, col });
    Ok(out)
}
