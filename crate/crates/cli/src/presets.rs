//! Built-in breathing models used when `gen-trace` gets no `--model`.

pub const X: &str = "const double period = 5088.0;
const double drift = -0.0;
double base = -3.6508;
double a[4] = { -0.608, 0.205, 0.0744, -0.0764 };
double b[4] = { 2.5745, -0.414, -0.0149, 0.0096 };
";

pub const Y: &str = "const double period = 5088.0;
const double drift = 0.0;
double base = 1.698;
double a[4] = { 0.2631, -0.0887, -0.0322, 0.0331 };
double b[4] = { -1.1144, 0.1792, 0.0065, -0.0041 };
";

pub const Z: &str = "const double period = 5088.0;
const double drift = 0.0;
double base = 1.8164;
double a[4] = { 0.0757, -0.0255, -0.0093, 0.0095 };
double b[4] = { -0.3202, 0.0516, 0.0019, -0.0012 };
";
