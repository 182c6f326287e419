# cvqpu/__main__.py
from cvqpu.cli import run

if __name__ == "__main__":
    run()
