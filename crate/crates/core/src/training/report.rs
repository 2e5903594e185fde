//! Report tables as CSV and aligned markdown.

use super::metrics::{AggregateRow, MeanStd, MetricsReport};

/// `mm:ss.mmm`.
pub fn format_runtime(seconds: f64) -> String {
    let ms = (seconds * 1000.0).round() as u64;
    format!("{:02}:{:02}.{:03}", ms / 60_000, (ms / 1000) % 60, ms % 1000)
}

fn with_std(m: &MeanStd, decimals: usize, runs: usize) -> String {
    if runs > 1 {
        format!("{:.*} (±{:.*})", decimals, m.mean, decimals, m.std)
    } else {
        format!("{:.*}", decimals, m.mean)
    }
}

/// Aligned markdown table; the first column is left-aligned, the rest
/// right-aligned.
pub fn markdown_table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut width: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for r in rows {
        for (w, c) in width.iter_mut().zip(r) {
            *w = (*w).max(c.chars().count());
        }
    }
    let pad = |s: &str, w: usize, left: bool| {
        let fill = " ".repeat(w - s.chars().count());
        if left {
            format!("{s}{fill}")
        } else {
            format!("{fill}{s}")
        }
    };
    let line = |cells: Vec<String>| format!("| {} |\n", cells.join(" | "));
    let mut out = line(header.iter().enumerate().map(|(i, h)| pad(h, width[i], i == 0)).collect());
    out.push_str(&line(
        width
            .iter()
            .enumerate()
            .map(|(i, &w)| if i == 0 { format!(":{}", "-".repeat(w - 1)) } else { format!("{}:", "-".repeat(w - 1)) })
            .collect(),
    ));
    for r in rows {
        out.push_str(&line(r.iter().enumerate().map(|(i, c)| pad(c, width[i], i == 0)).collect()));
    }
    out
}

/// Epochs, run time and parameter counts per model.
pub fn fitting_table(rows: &[AggregateRow]) -> String {
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.model.clone(),
                r.epochs.as_ref().map_or("-".into(), |e| with_std(e, 0, r.runs)),
                format_runtime(r.seconds.mean),
                r.parameters.to_string(),
            ]
        })
        .collect();
    markdown_table(&["model", "epochs", "run time", "#parameters"], &body)
}

/// Train/test deviance and average predicted frequency, all in percent.
pub fn loss_table(rows: &[AggregateRow]) -> String {
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.model.clone(),
                with_std(&r.train_deviance, 3, r.runs),
                with_std(&r.test_deviance, 3, r.runs),
                with_std(&r.avg_frequency, 3, r.runs),
            ]
        })
        .collect();
    markdown_table(&["model", "Train-loss in %", "Test-loss in %", "avg(ŷ) in %"], &body)
}

pub fn rows_csv(report: &MetricsReport) -> String {
    let mut s = String::from("model,run,train_deviance,test_deviance,avg_frequency,parameters,epochs,seconds\n");
    for r in &report.rows {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.model,
            r.run,
            r.train_deviance,
            r.test_deviance,
            r.avg_frequency,
            r.parameters,
            r.epochs.map_or(String::new(), |e| e.to_string()),
            r.seconds
        ));
    }
    s
}

pub fn aggregate_csv(rows: &[AggregateRow]) -> String {
    let mut s = String::from(
        "model,runs,train_mean,train_std,test_mean,test_std,avg_mean,avg_std,parameters,epochs_mean,epochs_std,seconds_mean\n",
    );
    for r in rows {
        let (em, es) = r.epochs.map_or((String::new(), String::new()), |e| (e.mean.to_string(), e.std.to_string()));
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.model,
            r.runs,
            r.train_deviance.mean,
            r.train_deviance.std,
            r.test_deviance.mean,
            r.test_deviance.std,
            r.avg_frequency.mean,
            r.avg_frequency.std,
            r.parameters,
            em,
            es,
            r.seconds.mean
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn runtime_format() {
        assert_eq!(format_runtime(83.4567), "01:23.457");
        assert_eq!(format_runtime(0.0), "00:00.000");
    }

    #[test]
    fn markdown_columns_align() {
        let t = markdown_table(&["model", "x"], &[vec!["a".into(), "1.5".into()], vec!["long name".into(), "2".into()]]);
        let widths: Vec<usize> = t.lines().map(|l| l.chars().count()).collect();
        assert!(widths.windows(2).all(|w| w[0] == w[1]), "{t}");
    }
}
