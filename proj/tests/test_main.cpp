#define DOCTEST_CONFIG_IMPLEMENT
#include <doctest.h>

#include <cstring>
#include <string>
#include <vector>

std::string g_fixture_dir = "tests/fixtures";

int main(int argc, char** argv) {
  std::vector<char*> args;
  const char* prefix = "--fixture-dir=";
  for (int i = 0; i < argc; ++i) {
    if (std::strncmp(argv[i], prefix, std::strlen(prefix)) == 0)
      g_fixture_dir = argv[i] + std::strlen(prefix);
    else
      args.push_back(argv[i]);
  }
  doctest::Context ctx(int(args.size()), args.data());
  return ctx.run();
}
