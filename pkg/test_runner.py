#!/usr/bin/env python3
"""
Test runner for the insertion simulator
Run this script to execute the test suite, grouped by module
"""

import subprocess
import sys
import os

TEST_GROUPS = [
    {"name": "Geometry Tests", "file": "test_geometry.py", "description": "Manipulation frame and insertion angles"},
    {"name": "Pose Math Tests", "file": "test_posemath.py", "description": "SE(3) maps and the simulated tracker"},
    {"name": "Hand Model Tests", "file": "test_hand.py", "description": "Energy equilibrium and dataset generation"},
    {"name": "Inverse Model Tests", "file": "test_inverse_model.py", "description": "MLP training and model files"},
    {"name": "World Tests", "file": "test_world.py", "description": "Arm, contact resolution and jamming"},
    {"name": "Controller Tests", "file": "test_control.py", "description": "Grasp planning and visual servos"},
    {"name": "Harness Tests", "file": "test_harness.py", "description": "Config files, reports and replay"},
    {"name": "Schema Validation Tests", "file": "test_schemas.py", "description": "Config and result validation"},
    {"name": "Database Tests", "file": "test_database.py", "description": "Stored trials and aggregation"},
    {"name": "Integration Tests", "file": "test_integration.py", "description": "Seeded experiment trends"},
    {"name": "Performance Tests", "file": "test_performance.py", "description": "Time and memory bounds"},
]


def _pytest(args):
    return subprocess.run([sys.executable, "-m", "pytest", *args, "-v", "--tb=short", "--color=yes"],
                          capture_output=True, text=True)


def run_tests(include_slow=False):
    """Run every group in turn and report which ones failed"""
    print("Running insertion test suite")
    print("=" * 50)
    os.chdir(os.path.dirname(os.path.abspath(__file__)))

    failed = []
    for group in TEST_GROUPS:
        print(f"{group['name']}: {group['description']}")
        args = [f"tests/{group['file']}"]
        if not include_slow:
            args += ["-m", "not slow"]
        result = _pytest(args)
        # exit code 5 means every test in the group was deselected
        if result.returncode not in (0, 5):
            failed.append(group["name"])
            print(result.stdout)
            if result.stderr:
                print(result.stderr)
        else:
            print("  passed")

    if failed:
        print(f"Failed groups: {', '.join(failed)}")
        return False
    print("All test groups passed")
    return True


def run_specific_test(test_file):
    """Run a specific test file"""
    print(f"Running {test_file}")
    print("=" * 50)
    result = _pytest([f"tests/{test_file}"])
    print(result.stdout)
    if result.stderr:
        print(result.stderr)
    return result.returncode == 0


if __name__ == "__main__":
    if len(sys.argv) > 1:
        command = sys.argv[1]
        if command == "slow":
            success = run_tests(include_slow=True)
        elif command.endswith(".py"):
            success = run_specific_test(command)
        else:
            print(f"Unknown command: {command}")
            print("Available commands:")
            print("  python test_runner.py                   # Run all groups without slow tests")
            print("  python test_runner.py slow              # Include the slow acceptance experiments")
            print("  python test_runner.py test_world.py     # Run specific test file")
            success = False
    else:
        success = run_tests()

    sys.exit(0 if success else 1)
