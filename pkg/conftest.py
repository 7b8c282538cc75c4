from visualwords.boot import setup_env

setup_env()
