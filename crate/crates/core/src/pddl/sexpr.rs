//! S-expression reader with byte offsets. Symbols are lowercased; `;`
//! starts a comment that runs to the end of the line.

use super::PddlError;

#[derive(Clone, Debug, PartialEq)]
pub enum Sexp {
    Symbol(String, usize),
    List(Vec<Sexp>, usize),
}

impl Sexp {
    pub fn offset(&self) -> usize {
        match self {
            Sexp::Symbol(_, o) | Sexp::List(_, o) => *o,
        }
    }

    pub fn as_symbol(&self) -> Option<&str> {
        match self {
            Sexp::Symbol(s, _) => Some(s),
            Sexp::List(..) => None,
        }
    }

    pub fn as_list(&self) -> Option<&[Sexp]> {
        match self {
            Sexp::List(items, _) => Some(items),
            Sexp::Symbol(..) => None,
        }
    }
}

fn skip_space(bytes: &[u8], mut i: usize) -> usize {
    while i < bytes.len() {
        match bytes[i] {
            b';' => {
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
            }
            c if c.is_ascii_whitespace() => i += 1,
            _ => break,
        }
    }
    i
}

/// Reads every top-level expression in `text`.
pub fn read_all(text: &str) -> Result<Vec<Sexp>, PddlError> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut stack: Vec<(Vec<Sexp>, usize)> = Vec::new();
    let mut i = skip_space(bytes, 0);
    while i < bytes.len() {
        match bytes[i] {
            b'(' => {
                stack.push((Vec::new(), i));
                i += 1;
            }
            b')' => {
                let (items, start) = stack.pop().ok_or_else(|| PddlError::parse(i, "unbalanced parentheses: unexpected ')'"))?;
                let list = Sexp::List(items, start);
                match stack.last_mut() {
                    Some((parent, _)) => parent.push(list),
                    None => out.push(list),
                }
                i += 1;
            }
            _ => {
                let start = i;
                while i < bytes.len() && !bytes[i].is_ascii_whitespace() && !matches!(bytes[i], b'(' | b')' | b';') {
                    i += 1;
                }
                let sym = Sexp::Symbol(text[start..i].to_lowercase(), start);
                match stack.last_mut() {
                    Some((parent, _)) => parent.push(sym),
                    None => out.push(sym),
                }
            }
        }
        i = skip_space(bytes, i);
    }
    if let Some((_, start)) = stack.last() {
        return Err(PddlError::parse(*start, "unbalanced parentheses: '(' never closed"));
    }
    Ok(out)
}

/// Reads exactly one expression.
pub fn read_one(text: &str) -> Result<Sexp, PddlError> {
    let mut all = read_all(text)?.into_iter();
    let first = all.next().ok_or_else(|| PddlError::parse(text.len(), "empty input"))?;
    if let Some(extra) = all.next() {
        return Err(PddlError::parse(extra.offset(), "trailing input after expression"));
    }
    Ok(first)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn offsets_and_case() {
        let e = read_one("  (And (Visited P_1))").unwrap();
        let Sexp::List(items, 2) = e else { panic!("{e:?}") };
        assert_eq!(items[0], Sexp::Symbol("and".into(), 3));
        assert_eq!(items[1].offset(), 7);
    }

    #[test]
    fn unbalanced() {
        assert_eq!(read_one("(a (b)").unwrap_err().offset(), Some(0));
        assert_eq!(read_one("(a))").unwrap_err().offset(), Some(3));
        assert!(read_one("(a) (b)").is_err());
        assert!(read_one("  ").is_err());
    }

    #[test]
    fn comments_are_skipped() {
        let all = read_all("; header\n(a ; inline\n b)\n").unwrap();
        assert_eq!(all.len(), 1);
        assert_eq!(all[0].as_list().unwrap().len(), 2);
    }
}
