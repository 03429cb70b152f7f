use std::net::SocketAddr;
use std::path::PathBuf;

fn usage() -> ! {
    eprintln!("usage: lab-server [--addr HOST:PORT] [--root DIR]");
    eprintln!("worker count comes from {} (default 1)", lab_server::WORKERS_ENV);
    std::process::exit(2);
}

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    let mut addr: SocketAddr = "127.0.0.1:8023".parse().unwrap();
    let mut root = PathBuf::from(".");
    let mut args = std::env::args().skip(1);
    while let Some(arg) = args.next() {
        match arg.as_str() {
            "--addr" => match args.next().and_then(|v| v.parse().ok()) {
                Some(a) => addr = a,
                None => usage(),
            },
            "--root" => match args.next() {
                Some(r) => root = PathBuf::from(r),
                None => usage(),
            },
            _ => usage(),
        }
    }
    let workers = lab_server::workers_from_env();
    lab_server::serve(addr, root, workers, |bound| {
        println!("lab server listening on http://{bound} ({workers} workers)");
    })
    .await
}
