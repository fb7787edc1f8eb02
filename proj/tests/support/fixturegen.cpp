// Regenerates the checked-in synthetic fixtures under tests/fixtures.
//   lirank_fixturegen <fixtures-dir>

#include <iostream>

#include "synthetic.hpp"

int main(int argc, char** argv) {
  using namespace lirank::testing;
  const fs::path root = argc > 1 ? fs::path(argv[1]) : fixtures_dir();
  write_all_fixtures(root);
  std::cout << "fixtures written to " << root << "\n";
  return 0;
}
