/// Rows printed twice: as an aligned table for reading and as CSV for
/// scripts.
pub struct Report {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Report {
    pub fn new(header: &[&str]) -> Self {
        Report { header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn row(&mut self, cells: Vec<String>) {
        debug_assert_eq!(cells.len(), self.header.len());
        self.rows.push(cells);
    }

    pub fn table(&self) -> String {
        let mut widths: Vec<usize> = self.header.iter().map(|h| h.len()).collect();
        for r in &self.rows {
            for (w, c) in widths.iter_mut().zip(r) {
                *w = (*w).max(c.len());
            }
        }
        let line = |cells: &[String]| {
            let parts: Vec<String> = cells.iter().zip(&widths).map(|(c, &w)| format!("{c:<w$}")).collect();
            parts.join("  ").trim_end().to_string() + "\n"
        };
        let mut s = line(&self.header);
        s += &(widths.iter().map(|&w| "-".repeat(w)).collect::<Vec<_>>().join("  ") + "\n");
        for r in &self.rows {
            s += &line(r);
        }
        s
    }

    pub fn csv(&self) -> String {
        let mut s = self.header.join(",") + "\n";
        for r in &self.rows {
            s += &(r.join(",") + "\n");
        }
        s
    }

    /// Table, a blank line, then the CSV block.
    pub fn print(&self) {
        print!("{}\n{}", self.table(), self.csv());
    }
}

/// Prints `key = value` lines describing the resolved run configuration.
pub fn print_config(command: &str, entries: &[(&str, String)]) {
    println!("[{command}]");
    let w = entries.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    for (k, v) in entries {
        println!("  {k:<w$} = {v}");
    }
    println!();
}

pub fn num(v: f64) -> String {
    format!("{v:.6e}")
}
