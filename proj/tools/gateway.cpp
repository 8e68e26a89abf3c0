#include <CLI11.hpp>
#include <csignal>
#include <iostream>

#include "drw/error.hpp"
#include "drw/gateway.hpp"

namespace {

drw::gateway::Server* g_server = nullptr;

void on_signal(int) {
  if (g_server) g_server->stop();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Watermarking reverse proxy", "drw_gateway"};
  std::string config_path;
  app.add_option("--config", config_path, "Gateway config document")->required();
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    auto config = drw::gateway::load_gateway_config(config_path);
    drw::gateway::Gateway gateway(config, nullptr);
    drw::gateway::Server server(gateway);
    const int port = server.bind(config.listen_address, config.port);
    if (port < 0) {
      std::cerr << "drw_gateway: cannot bind " << config.listen_address << ':'
                << config.port << '\n';
      return 2;
    }
    g_server = &server;
    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    std::cerr << "drw_gateway: " << gateway.keys_loaded() << " keys, listening on "
              << config.listen_address << ':' << port << '\n';
    server.run();
    g_server = nullptr;
  } catch (const drw::Error& e) {
    std::cerr << "drw_gateway: " << drw::to_string(e.kind()) << ": " << e.what() << '\n';
    return 2;
  }
  return 0;
}
