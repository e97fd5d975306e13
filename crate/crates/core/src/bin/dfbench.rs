//! `dfbench ARGS` is `dfctl bench ARGS`.

fn main() {
    let mut args: Vec<_> = std::env::args_os().collect();
    args.insert(1.min(args.len()), "bench".into());
    std::process::exit(gdf_core::cli::main_with_args(args));
}
