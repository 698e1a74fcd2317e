fn main() {
    std::process::exit(geojoint::cli::main_with_args(std::env::args_os()));
}
