use super::LinearError;

/// Dense row-major design matrix with named columns.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
    labels: Vec<String>,
}

impl DesignMatrix {
    pub fn from_row_major(
        rows: usize,
        cols: usize,
        values: Vec<f64>,
        labels: Vec<String>,
    ) -> Result<Self, LinearError> {
        if values.len() != rows * cols {
            return Err(LinearError::Shape(format!("{} values for a {rows} x {cols} design", values.len())));
        }
        if labels.len() != cols {
            return Err(LinearError::Shape(format!("{} labels for {cols} columns", labels.len())));
        }
        if cols == 0 {
            return Err(LinearError::Shape("design has no columns".into()));
        }
        if rows < cols {
            return Err(LinearError::Shape(format!("{rows} rows cannot identify {cols} columns")));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(LinearError::NonFinite("design"));
        }
        Ok(Self { rows, cols, values, labels })
    }

    /// Builds a design from named columns of equal length.
    pub fn from_columns(columns: &[(&str, &[f64])]) -> Result<Self, LinearError> {
        let cols = columns.len();
        let rows = columns.first().map_or(0, |(_, c)| c.len());
        if let Some((name, c)) = columns.iter().find(|(_, c)| c.len() != rows) {
            return Err(LinearError::Shape(format!("column `{name}` has {} rows, expected {rows}", c.len())));
        }
        let mut values = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            values.extend(columns.iter().map(|(_, c)| c[i]));
        }
        let labels = columns.iter().map(|(name, _)| name.to_string()).collect();
        Self::from_row_major(rows, cols, values, labels)
    }

    /// Intercept column followed by the given named columns.
    pub fn with_intercept(columns: &[(&str, &[f64])]) -> Result<Self, LinearError> {
        let n = columns.first().map_or(0, |(_, c)| c.len());
        let ones = vec![1.0; n];
        let mut all: Vec<(&str, &[f64])> = vec![("intercept", &ones)];
        all.extend_from_slice(columns);
        Self::from_columns(&all)
    }

    /// Intercept-only design with `n` rows.
    pub fn intercept_only(n: usize) -> Result<Self, LinearError> {
        Self::from_row_major(n, 1, vec![1.0; n], vec!["intercept".into()])
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols + j]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    /// Replaces every entry of column `j` with `value`.
    pub fn set_column(&mut self, j: usize, value: f64) {
        for i in 0..self.rows {
            self.values[i * self.cols + j] = value;
        }
    }

    /// Subset of rows, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Result<Self, LinearError> {
        let mut values = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            values.extend_from_slice(self.row(i));
        }
        Self::from_row_major(idx.len(), self.cols, values, self.labels.clone())
    }

    pub fn mul_vec(&self, beta: &[f64]) -> Vec<f64> {
        assert_eq!(beta.len(), self.cols);
        self.values.chunks_exact(self.cols).map(|row| row.iter().zip(beta).map(|(x, b)| x * b).sum()).collect()
    }

    /// Root mean square of each column.
    pub fn column_rms(&self) -> Vec<f64> {
        let mut acc = vec![0.0; self.cols];
        for row in self.values.chunks_exact(self.cols) {
            for (a, x) in acc.iter_mut().zip(row) {
                *a += x * x;
            }
        }
        acc.iter().map(|s| (s / self.rows as f64).sqrt()).collect()
    }
}
