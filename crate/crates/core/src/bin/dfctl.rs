fn main() {
    std::process::exit(gdf_core::cli::main_with_args(std::env::args_os().collect()));
}
