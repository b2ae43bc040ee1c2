/// Canonical form used for de-duplication and as the exported observation text.
///
/// Lowercases, turns hyphen runs between word characters into a single space
/// (or removes them when both neighbours are single letters, so `r-r` becomes
/// `rr` like the `pr`/`rr`/`pp` interval names), collapses whitespace, and
/// strips trailing `.,;:"`. Idempotent.
pub fn normalize_text(text: &str) -> String {
    let lowered: Vec<char> = text.to_lowercase().chars().collect();
    let mut dehyphenated = String::with_capacity(lowered.len());

    let mut i = 0;
    while i < lowered.len() {
        let c = lowered[i];
        if c != '-' {
            dehyphenated.push(c);
            i += 1;
            continue;
        }
        let start = i;
        while i < lowered.len() && lowered[i] == '-' {
            i += 1;
        }
        let before = start.checked_sub(1).map(|j| lowered[j]);
        let after = lowered.get(i).copied();
        match (before, after) {
            (Some(b), Some(a)) if is_word(b) && is_word(a) => {
                let lone_before =
                    b.is_alphabetic() && start.checked_sub(2).is_none_or(|j| !is_word(lowered[j]));
                let lone_after =
                    a.is_alphabetic() && lowered.get(i + 1).is_none_or(|&n| !is_word(n));
                if !(lone_before && lone_after) {
                    dehyphenated.push(' ');
                }
            }
            _ => dehyphenated.extend(&lowered[start..i]),
        }
    }

    let mut out = dehyphenated
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ");
    loop {
        let stripped = out
            .trim_end_matches(['.', ',', ';', ':', '"'])
            .trim_end()
            .to_string();
        if stripped == out {
            return out;
        }
        out = stripped;
    }
}

fn is_word(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}
