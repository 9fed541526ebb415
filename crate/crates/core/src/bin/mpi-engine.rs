fn main() {
    std::process::exit(mpi_engine::cli::run(std::env::args_os()));
}
