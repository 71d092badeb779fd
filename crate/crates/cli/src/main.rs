// The sampler and its tape allocate many short-lived buffers.
#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

fn main() {
    std::process::exit(ddimlab_cli::run(std::env::args_os()));
}
