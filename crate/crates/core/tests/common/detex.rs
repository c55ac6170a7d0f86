/// Plain text of a typeset prompt block.
pub fn detex(src: &str) -> String {
    let mut s = src
        .replace("\\hspace{-5.2mm}", "")
        .replace("{\\color{purple}", "\u{1}")
        .replace("\\textbf{", "\u{1}")
        .replace("$\\wedge$~", "∧ ")
        .replace("$\\wedge$", "∧")
        .replace("$\\lnot$", "¬")
        .replace("\\{", "\u{2}")
        .replace("\\}", "\u{3}")
        .replace("\\$", "$");
    // Drop the braces that closed \textbf and \color groups.
    let mut out = String::new();
    let mut depth = 0usize;
    for ch in s.chars() {
        match ch {
            '\u{1}' => depth += 1,
            '}' if depth > 0 => depth -= 1,
            _ => out.push(ch),
        }
    }
    s = out.replace('\u{2}', "{").replace('\u{3}', "}");
    // Forced breaks eat the surrounding whitespace; other line breaks are spaces.
    let chars: Vec<char> = s.replace("\\newline", "\u{4}").chars().collect();
    let mut text = String::new();
    let mut i = 0;
    while i < chars.len() {
        if !chars[i].is_whitespace() {
            text.push(if chars[i] == '\u{4}' { '\n' } else { chars[i] });
            i += 1;
            continue;
        }
        let run_start = i;
        while i < chars.len() && chars[i].is_whitespace() {
            i += 1;
        }
        let run = &chars[run_start..i];
        let beside_break = run_start == 0 || chars[run_start - 1] == '\u{4}' || chars.get(i).map_or(true, |&c| c == '\u{4}');
        if beside_break {
            continue;
        }
        if run.contains(&'\n') {
            text.push(' ');
        } else {
            text.extend(run);
        }
    }
    text
}
