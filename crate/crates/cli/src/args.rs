use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "epd", version, about = "Robust estimation with the exponential-polynomial divergence family")]
pub struct Cli {
    #[arg(long, value_enum, global = true, default_value_t = Format::Json)]
    pub format: Format,
    /// Seed for every random choice (regression LMS subsets).
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelKind {
    Normal,
    Exponential,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Plugin {
    Hybrid,
    Empirical,
    Model,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CurveArg {
    Influence,
    Weight,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Minimum-divergence fit of a univariate model.
    Fit(FitArgs),
    /// Maximum-likelihood fit (the beta = 0, gamma = 0 member).
    Mle(MleArgs),
    /// Warwick-Jones selection of the tuning triplet for a univariate model.
    Tune(TuneArgs),
    /// Minimum-divergence fit of a normal linear regression.
    Regress(RegressArgs),
    /// Warwick-Jones selection of the tuning triplet for a regression.
    TuneRegress(TuneRegressArgs),
    /// Influence or weight function table.
    Curve(CurveArgs),
    /// Criterion values on the tuning grid, without refinement.
    MseSurface(SurfaceArgs),
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Bundled dataset name or path to a CSV file with a header row.
    #[arg(long)]
    pub data: String,
}

#[derive(Debug, Args)]
pub struct TripletArgs {
    #[arg(long, allow_hyphen_values = true, default_value_t = 0.0)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.0)]
    pub beta: f64,
    #[arg(long, default_value_t = 0.0)]
    pub gamma: f64,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Defaults to the dataset's reference model, or normal for files.
    #[arg(long, value_enum)]
    pub model: Option<ModelKind>,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub triplet: TripletArgs,
    /// Comma-separated starting value in the model's parameter order.
    #[arg(long, allow_hyphen_values = true, value_delimiter = ',')]
    pub init: Option<Vec<f64>>,
    /// Report the sandwich covariance and standard errors.
    #[arg(long)]
    pub variance: bool,
}

#[derive(Debug, Args)]
pub struct MleArgs {
    #[arg(long, value_enum)]
    pub model: Option<ModelKind>,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub variance: bool,
}

#[derive(Debug, Args, Clone)]
pub struct RangeArgs {
    /// `lo:hi`
    #[arg(long, allow_hyphen_values = true)]
    pub alpha_range: Option<String>,
    #[arg(long)]
    pub beta_range: Option<String>,
    #[arg(long)]
    pub gamma_range: Option<String>,
    /// Grid sizes `a,b,g`.
    #[arg(long)]
    pub grid: Option<String>,
    /// Skip the simplex refinement.
    #[arg(long)]
    pub no_refine: bool,
    #[arg(long)]
    pub refine_cells: Option<usize>,
    #[arg(long)]
    pub pilot_gamma: Option<f64>,
    /// Where `J` and `K` are evaluated; defaults to hybrid (univariate) or model (regression).
    #[arg(long, value_enum)]
    pub plugin: Option<Plugin>,
}

#[derive(Debug, Args)]
pub struct TuneArgs {
    #[arg(long, value_enum)]
    pub model: Option<ModelKind>,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub ranges: RangeArgs,
    /// Report only the beta = 0 search.
    #[arg(long)]
    pub dpd_only: bool,
    /// Include every evaluated triplet.
    #[arg(long)]
    pub surface: bool,
}

#[derive(Debug, Args)]
pub struct RegressArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Prepend an intercept column.
    #[arg(long)]
    pub intercept: bool,
    #[command(flatten)]
    pub triplet: TripletArgs,
    #[arg(long)]
    pub variance: bool,
}

#[derive(Debug, Args)]
pub struct TuneRegressArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub intercept: bool,
    #[command(flatten)]
    pub ranges: RangeArgs,
    #[arg(long)]
    pub dpd_only: bool,
    #[arg(long)]
    pub surface: bool,
}

#[derive(Debug, Args)]
pub struct CurveArgs {
    #[arg(value_enum)]
    pub kind: CurveArg,
    #[arg(long, value_enum, default_value_t = ModelKind::Normal)]
    pub model: ModelKind,
    /// Defaults to the standard member: (0, 1) normal, 1 exponential.
    #[arg(long, allow_hyphen_values = true, value_delimiter = ',')]
    pub theta: Option<Vec<f64>>,
    /// Weight curves accept comma lists; one column per combination.
    #[arg(long, allow_hyphen_values = true, value_delimiter = ',', default_value = "0")]
    pub alpha: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0")]
    pub beta: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0")]
    pub gamma: Vec<f64>,
    /// `lo:hi:n`
    #[arg(long, allow_hyphen_values = true)]
    pub grid: String,
}

#[derive(Debug, Args)]
pub struct SurfaceArgs {
    /// Ignored for regression datasets.
    #[arg(long, value_enum)]
    pub model: Option<ModelKind>,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub intercept: bool,
    #[command(flatten)]
    pub ranges: RangeArgs,
}
