#pragma once

#include <string>
#include <vector>

namespace windgrid::selfcheck {

struct Item {
  std::string name;
  double max_rel_err = 0;
  bool pass = false;
};

struct Result {
  std::vector<Item> items;
  bool ok = true;
  double worst = 0;
};

// 64-bit finite-difference verification of every differentiable operator plus
// a full tiny model with the masked loss. The pass bar is 1e-4 everywhere.
Result run_selfcheck();

}  // namespace windgrid::selfcheck
