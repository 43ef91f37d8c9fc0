use super::{Comment, Sentence};

/// Lowercase words (without the trailing period) that never end a sentence.
const ABBREVIATIONS: &[&str] = &[
    "mr", "mrs", "ms", "dr", "prof", "sr", "jr", "st", "vs", "e.g", "i.e", "cf", "approx",
];

/// Splits a comment body into sentences.
///
/// A boundary is a run of `.`, `!` or `?` (plus closing quotes or brackets)
/// that is followed by the end of the text, or by whitespace and an uppercase
/// letter. A period ending a word from the abbreviation list is not a boundary.
pub fn split_sentences(comment: &Comment) -> Vec<Sentence> {
    split_text(&comment.body)
        .into_iter()
        .enumerate()
        .map(|(index, text)| Sentence {
            comment_id: comment.id.clone(),
            index,
            text,
        })
        .collect()
}

/// Sentence splitting on raw text.
pub fn split_text(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut start = 0;
    let mut i = 0;
    while i < chars.len() {
        if !is_terminator(chars[i]) {
            i += 1;
            continue;
        }
        let term_at = i;
        while i < chars.len() && (is_terminator(chars[i]) || is_closer(chars[i])) {
            i += 1;
        }
        let end = i;
        let mut j = i;
        while j < chars.len() && chars[j].is_whitespace() {
            j += 1;
        }
        let at_end = j == chars.len();
        let next_upper = j > i && j < chars.len() && starts_upper(&chars[j..]);
        let abbreviation = chars[term_at] == '.' && ends_with_abbreviation(&chars[start..term_at]);
        if at_end || (next_upper && !abbreviation) {
            push_trimmed(&mut out, &chars[start..end]);
            start = j;
            i = j;
        }
    }
    if start < chars.len() {
        push_trimmed(&mut out, &chars[start..]);
    }
    out
}

fn is_terminator(c: char) -> bool {
    matches!(c, '.' | '!' | '?')
}

fn is_closer(c: char) -> bool {
    matches!(c, '"' | '\'' | ')' | ']' | '”' | '’')
}

fn starts_upper(rest: &[char]) -> bool {
    rest.iter()
        .find(|c| !matches!(c, '"' | '\'' | '(' | '“' | '‘'))
        .is_some_and(|c| c.is_uppercase())
}

fn ends_with_abbreviation(before: &[char]) -> bool {
    let word_start = before
        .iter()
        .rposition(|c| c.is_whitespace())
        .map_or(0, |p| p + 1);
    let word: String = before[word_start..]
        .iter()
        .skip_while(|c| !c.is_alphanumeric())
        .collect::<String>()
        .to_lowercase();
    ABBREVIATIONS.contains(&word.as_str())
}

fn push_trimmed(out: &mut Vec<String>, chars: &[char]) {
    let s: String = chars.iter().collect();
    let s = s.trim();
    if !s.is_empty() {
        out.push(s.to_string());
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn terminator_split() {
        assert_eq!(split_text("A. B? C!"), vec!["A.", "B?", "C!"]);
    }

    #[test]
    fn single_sentence_without_terminator() {
        let c = Comment {
            id: "c1".into(),
            post_id: "p1".into(),
            body: "no terminator here".into(),
            upvotes: 0,
            downvotes: 0,
            delta_awarded: false,
        };
        let s = split_sentences(&c);
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].index, 0);
        assert_eq!(s[0].text, "no terminator here");
    }

    // Hand-labeled boundaries.
    #[test]
    fn labeled_fixtures() {
        let cases: &[(&str, &[&str])] = &[
            ("Dr. Smith agrees. Yes.", &["Dr. Smith agrees.", "Yes."]),
            ("Mr. and Mrs. Jones came. They left.", &["Mr. and Mrs. Jones came.", "They left."]),
            ("It costs 3.5 dollars. Cheap!", &["It costs 3.5 dollars.", "Cheap!"]),
            ("Really?! Yes. ok then.", &["Really?!", "Yes. ok then."]),
            ("He said \"stop.\" Then he left.", &["He said \"stop.\"", "Then he left."]),
            ("See e.g. Table one. Done", &["See e.g. Table one.", "Done"]),
            ("Wait... What happened?", &["Wait...", "What happened?"]),
            ("   ", &[]),
        ];
        for (text, want) in cases {
            assert_eq!(split_text(text), want.iter().map(|s| s.to_string()).collect::<Vec<_>>(), "{text}");
        }
    }

    proptest! {
        #[test]
        fn preserves_non_whitespace(words in proptest::collection::vec("[A-Za-z]{1,6}[.!?]?", 1..20)) {
            let text = words.join(" ");
            let parts = split_text(&text);
            prop_assert!(parts.iter().all(|p| !p.is_empty()));
            let strip = |s: &str| s.chars().filter(|c| !c.is_whitespace()).collect::<String>();
            prop_assert_eq!(strip(&parts.concat()), strip(&text));
        }
    }
}
